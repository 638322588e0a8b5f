"""Command line front end.

    pagecrypt gen --kind random --pages 64 --ops 20000 --seed 7 -o trace.txt
    pagecrypt run --window 16 --trace trace.txt --metrics out.csv
    pagecrypt analyze --snapshot snap0.bin --markers markers.hex --key-file key.hex
    pagecrypt report out1.csv out2.csv

The PAGECRYPT_STACK environment variable (0 or 1) sets the default for
--stack, mirroring how a real preload shim would read its own environment.
Exit status of `run` is nonzero when any runtime invariant tripped.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import analyzer, bench
from .bench import RunConfig, WorkloadSpec
from .errors import PageCryptError


def _stack_default() -> str:
    return "off" if os.environ.get("PAGECRYPT_STACK", "1") == "0" else "on"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pagecrypt",
        description="page-granular memory encryption simulator and analyzer",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic workload trace")
    g.add_argument("--kind", choices=bench.WORKLOAD_KINDS, required=True)
    g.add_argument("--pages", type=int, required=True, help="working set in pages")
    g.add_argument("--ops", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)

    r = sub.add_parser("run", help="replay traces against the framework")
    r.add_argument("--window", type=int, default=16)
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--clients", type=int, default=1)
    r.add_argument("--stack", choices=["on", "off"], default=None)
    r.add_argument("--repeat", type=int, default=1)
    r.add_argument("--trace", action="append", required=True, metavar="FILE")
    r.add_argument("--snapshot-points", type=int, default=0)
    r.add_argument("--metrics", required=True, metavar="OUT.csv")
    r.add_argument("--label", default=None, help="workload label for the report")
    r.add_argument("--no-crypto", action="store_true",
                   help="cipher-off mode: pages are staged in clear")
    r.add_argument("--snapshot-dir", default=None,
                   help="write snapshot .bin files here")
    r.add_argument("--key-out", default=None,
                   help="write the generated master key (hex) for later analysis")
    r.add_argument("--seed", type=int, default=0, help="snapshot boundary placement")

    a = sub.add_parser("analyze", help="scan a snapshot for markers and key material")
    a.add_argument("--snapshot", required=True)
    a.add_argument("--markers", default=None, help="hex markers, one per line")
    a.add_argument("--key-file", default=None, help="64 hex chars")
    a.add_argument("--csv", default=None, help="write hit list as CSV")

    t = sub.add_parser("report", help="trend table from metrics files")
    t.add_argument("files", nargs="+")

    return p


def cmd_gen(args) -> int:
    spec = WorkloadSpec(args.kind, args.pages, args.ops, args.seed)
    Path(args.output).write_text(bench.gen_trace(spec))
    return 0


def cmd_run(args) -> int:
    stack = args.stack if args.stack is not None else _stack_default()
    config = RunConfig(
        window=args.window,
        workers=args.workers,
        stack_protection=stack == "on",
        clients=args.clients,
        snapshot_points=args.snapshot_points,
        crypto=not args.no_crypto,
        repeat=args.repeat,
        seed=args.seed,
    )
    traces, labels = [], []
    for f in args.trace:
        traces.append(Path(f).read_text())
        labels.append(Path(f).stem)
    sink = None
    if args.snapshot_dir:
        outdir = Path(args.snapshot_dir)
        outdir.mkdir(parents=True, exist_ok=True)

        def sink(i, snap):
            analyzer.save_snapshot(snap, outdir / f"snapshot{i:03d}.bin")

    result = bench.run_benchmark(config, traces, labels, snapshot_sink=sink)
    label = args.label or "+".join(labels)
    Path(args.metrics).write_text(bench.metrics_csv_text(result, label))
    if args.key_out and result.key_witness is not None:
        Path(args.key_out).write_text(result.key_witness.hex() + "\n")
    for v in result.violations:
        print(f"violation: {v}", file=sys.stderr)
    print(
        f"{label}: window={config.window} clients={config.clients} "
        f"faults={result.total(1)} evictions={result.total(3)} "
        f"{'OK' if result.ok else 'INVARIANT VIOLATIONS'}"
    )
    return 0 if result.ok else 1


def cmd_analyze(args) -> int:
    snap = analyzer.load_snapshot(args.snapshot)
    markers = []
    if args.markers:
        for line in Path(args.markers).read_text().splitlines():
            line = line.strip()
            if line:
                markers.append(bytes.fromhex(line))
    report = analyzer.scan_markers(snap, markers) if markers else analyzer.ExposureReport()
    if args.key_file:
        key = bytes.fromhex(Path(args.key_file).read_text().strip())
        report.key_found = analyzer.scan_key(snap, key)
    sys.stdout.write(analyzer.report_text(report))
    if args.csv:
        Path(args.csv).write_text(analyzer.report_csv(report))
    leaked = report.key_found or report.ciphertext_hits
    return 1 if leaked else 0


def cmd_report(args) -> int:
    metrics = [bench.parse_metrics_csv(Path(f).read_text()) for f in args.files]
    sys.stdout.write(bench.report(metrics))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "gen": cmd_gen,
        "run": cmd_run,
        "analyze": cmd_analyze,
        "report": cmd_report,
    }[args.command]
    try:
        return handler(args)
    except PageCryptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
