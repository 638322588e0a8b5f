import random

import pytest

from pagecrypt.cli import main


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture
def trace_file(tmp_path):
    path = tmp_path / "trace.txt"
    code = run_cli(
        "gen", "--kind", "random", "--pages", "8", "--ops", "200",
        "--seed", "3", "-o", str(path),
    )
    assert code == 0
    return path


def test_gen_is_deterministic(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    for p in (a, b):
        assert run_cli(
            "gen", "--kind", "sort_like", "--pages", "16", "--ops", "500",
            "--seed", "11", "-o", str(p),
        ) == 0
    assert a.read_text() == b.read_text()


def test_run_writes_metrics(trace_file, tmp_path):
    metrics = tmp_path / "m.csv"
    code = run_cli(
        "run", "--window", "4", "--workers", "1", "--trace", str(trace_file),
        "--metrics", str(metrics),
    )
    assert code == 0
    text = metrics.read_text()
    assert "client,faults,first_touch" in text
    assert "# label=trace" in text


def test_run_no_crypto_and_repeat(trace_file, tmp_path):
    metrics = tmp_path / "m.csv"
    code = run_cli(
        "run", "--window", "4", "--no-crypto", "--repeat", "3",
        "--trace", str(trace_file), "--metrics", str(metrics),
    )
    assert code == 0
    assert "repeat=3" in metrics.read_text()


def test_run_analyze_pipeline(trace_file, tmp_path, capsys):
    metrics = tmp_path / "m.csv"
    snapdir = tmp_path / "snaps"
    keyfile = tmp_path / "key.hex"
    code = run_cli(
        "run", "--window", "4", "--workers", "1", "--trace", str(trace_file),
        "--metrics", str(metrics), "--snapshot-points", "3",
        "--snapshot-dir", str(snapdir), "--key-out", str(keyfile),
    )
    assert code == 0
    snaps = sorted(snapdir.glob("snapshot*.bin"))
    assert len(snaps) == 3
    key_hex = keyfile.read_text().strip()
    assert len(key_hex) == 64

    markers = tmp_path / "markers.hex"
    rng = random.Random(5)
    markers.write_text(bytes(rng.randrange(256) for _ in range(32)).hex() + "\n")
    code = run_cli(
        "analyze", "--snapshot", str(snaps[0]), "--markers", str(markers),
        "--key-file", str(keyfile), "--csv", str(tmp_path / "hits.csv"),
    )
    out = capsys.readouterr().out
    assert code == 0  # compliant run: no key, no marker leaks
    assert "master key found:             no" in out
    assert (tmp_path / "hits.csv").read_text().startswith("marker_id,")


def test_report_command(trace_file, tmp_path, capsys):
    files = []
    for w in ("8", "4"):
        m = tmp_path / f"m{w}.csv"
        assert run_cli(
            "run", "--window", w, "--no-crypto", "--trace", str(trace_file),
            "--metrics", str(m), "--label", "random",
        ) == 0
        files.append(str(m))
    capsys.readouterr()  # drop the run summaries
    assert run_cli("report", *files) == 0
    out = capsys.readouterr().out
    assert out.startswith("# workload window clients")
    assert len([l for l in out.splitlines() if l.startswith("random")]) == 2


def test_env_var_sets_stack_default(trace_file, tmp_path, monkeypatch):
    stack_trace = tmp_path / "stack.txt"
    run_cli("gen", "--kind", "stack_heavy", "--pages", "8", "--ops", "100",
            "--seed", "1", "-o", str(stack_trace))
    metrics = tmp_path / "m.csv"
    monkeypatch.setenv("PAGECRYPT_STACK", "0")
    assert run_cli(
        "run", "--no-crypto", "--trace", str(stack_trace), "--metrics", str(metrics),
    ) == 0
    assert "stack=off" in metrics.read_text()


def test_gen_rejects_bad_kind(tmp_path):
    with pytest.raises(SystemExit):
        run_cli("gen", "--kind", "nope", "--pages", "1", "--ops", "1",
                "-o", str(tmp_path / "x"))


def test_missing_trace_file_is_clean_error(tmp_path, capsys):
    code = run_cli(
        "run", "--trace", str(tmp_path / "absent.txt"),
        "--metrics", str(tmp_path / "m.csv"),
    )
    assert code == 2
    assert "error:" in capsys.readouterr().err
