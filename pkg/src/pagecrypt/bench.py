"""Trace-driven benchmark harness.

Generates synthetic workloads, replays them against a full simulation
(clients, server, worker pool), collects per-client counters and wall
times, runs invariant checks at stop-the-world snapshot boundaries, and
renders trend tables comparing fault/eviction counts and slowdowns across
window sizes and client counts.

Workload kinds are stylized stand-ins for common access patterns:
``random`` hammers a working set uniformly (large-table lookups),
``sequential`` sweeps a buffer in order (streaming digests), ``stack_heavy``
concentrates accesses on stack-kind pages, and ``sort_like`` interleaves
array sweeps with a hot stack top.
"""

from __future__ import annotations

import io
import os
import statistics
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .analyzer import DumpSnapshot, check_accounting, scan_key, take_snapshot
from .client import KIND_ANON, KIND_STACK, ClientSpace, parse_trace, replay
from .errors import ContractViolation, TraceError
from .orchestrator import METRICS_HEADER, Orchestrator
from .ram import PAGE_SIZE, TaggedRam
from .workers import WorkerPool

WORKLOAD_KINDS = ("random", "sequential", "stack_heavy", "sort_like")


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str
    working_set: int  # pages
    ops: int
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in WORKLOAD_KINDS:
            raise ContractViolation(f"unknown workload kind {self.kind!r}")
        if self.working_set < 1:
            raise ContractViolation("working_set must be >= 1 page")
        if self.ops < 0:
            raise ContractViolation("ops must be >= 0")


@dataclass
class RunConfig:
    window: int = 16
    workers: int | None = None  # None: available hardware parallelism
    stack_protection: bool = True
    clients: int = 1
    snapshot_points: int = 0
    crypto: bool = True
    repeat: int = 1
    seed: int = 0  # placement of snapshot boundaries

    def __post_init__(self):
        if self.window < 1:
            raise ContractViolation("window must be >= 1")
        if self.clients < 1:
            raise ContractViolation("clients must be >= 1")
        if self.repeat < 1:
            raise ContractViolation("repeat must be >= 1")


# ---------------------------------------------------------------------------
# trace generation

def gen_trace(spec: WorkloadSpec) -> str:
    """Deterministic trace text for a workload spec."""
    rng = np.random.default_rng(spec.rng_seed)
    out = io.StringIO()
    w = out.write
    ws = spec.working_set

    def access_line(region, page, rng=rng):
        # never cross a page boundary: offsets stay clear of the page end
        off = int(page) * PAGE_SIZE + int(rng.integers(0, PAGE_SIZE - 8))
        if rng.random() < 0.25:
            data = rng.integers(0, 256, size=int(rng.integers(1, 9)), dtype=np.uint8)
            w(f"write {region} {off} {data.tobytes().hex()}\n")
        else:
            w(f"read {region} {off} {int(rng.integers(1, 9))}\n")

    if spec.kind == "random":
        w(f"alloc 0 {ws * PAGE_SIZE}\n")
        for page in rng.integers(0, ws, size=spec.ops):
            access_line(0, page)

    elif spec.kind == "sequential":
        w(f"alloc 0 {ws * PAGE_SIZE}\n")
        for i in range(spec.ops):
            w(f"read 0 {(i % ws) * PAGE_SIZE} 64\n")

    elif spec.kind == "stack_heavy":
        anon_pages = max(1, ws // 4)
        w(f"alloc 0 {ws * PAGE_SIZE} stack\n")
        w(f"alloc 1 {anon_pages * PAGE_SIZE}\n")
        for _ in range(spec.ops):
            if rng.random() < 0.95:
                access_line(0, rng.integers(0, ws))
            else:
                access_line(1, rng.integers(0, anon_pages))

    elif spec.kind == "sort_like":
        stack_pages = 4
        w(f"alloc 0 {ws * PAGE_SIZE}\n")
        w(f"alloc 1 {stack_pages * PAGE_SIZE} stack\n")
        emitted = 0
        depth = 0
        while emitted < spec.ops:
            # partition-style pass over a random subsegment of the array
            lo = int(rng.integers(0, ws))
            hi = int(rng.integers(lo, ws)) + 1
            depth = max(0, min(stack_pages * 8 - 1, depth + int(rng.integers(-2, 3))))
            for page in range(lo, hi):
                if emitted >= spec.ops:
                    break
                access_line(0, page)
                emitted += 1
                if emitted < spec.ops and emitted % 4 == 0:
                    # push/pop pointers near the stack top
                    soff = (depth * 512) % (stack_pages * PAGE_SIZE - 8)
                    w(f"write 1 {soff} {int(rng.integers(0, 2**32)):08x}\n")
                    emitted += 1

    return out.getvalue()


# ---------------------------------------------------------------------------
# simulation wiring

class Simulation:
    """One server plus its worker pool over a fresh simulated RAM."""

    def __init__(self, config: RunConfig, keysource=os.urandom, debug_leak_key=False):
        self.config = config
        self.ram = TaggedRam()
        self.key_witness: bytes | None = None  # harness-held copy, not RAM
        self.pool = None
        if config.crypto:
            def witnessed(n, _ks=keysource):
                material = _ks(n)
                self.key_witness = bytes(material)
                return material

            self.pool = WorkerPool(
                n_workers=config.workers,
                keysource=witnessed,
                ram=self.ram,
                debug_leak_key=debug_leak_key,
            )
        self.orchestrator = Orchestrator(
            self.ram, pool=self.pool, window_capacity=config.window
        )
        self._spaces: list[ClientSpace] = []

    def new_client(self, pid: int) -> ClientSpace:
        space = ClientSpace(
            self.orchestrator,
            self.ram,
            pid,
            stack_protection=self.config.stack_protection,
        )
        self._spaces.append(space)
        return space

    def spaces(self) -> list[ClientSpace]:
        return list(self._spaces)

    def snapshot(self) -> DumpSnapshot:
        return take_snapshot(self.ram)

    def check_invariants(self, where: str) -> list[str]:
        """Boundary checks; returns human-readable violation strings."""
        problems = []
        orch = self.orchestrator
        for client in orch.clients():
            n = orch.window_size(client)
            if n > self.config.window:
                problems.append(f"{where}: window of {client} holds {n} > W")
            try:
                orch.metrics(client).check_identities()
            except AssertionError:
                problems.append(f"{where}: metric identities broken for {client}")
        for buf in orch.transfer_buffers():
            if not buf.in_transfer and not buf.is_zero():
                problems.append(f"{where}: idle transfer buffer not zero")
        snap = self.snapshot()
        n_workers = self.pool.n_workers if self.pool else 0
        try:
            check_accounting(snap, n_workers)
        except ContractViolation as exc:
            problems.append(f"{where}: {exc}")
        if self.key_witness is not None and scan_key(snap, self.key_witness):
            problems.append(f"{where}: master key material visible in dump")
        return problems

    def close(self) -> None:
        for space in self._spaces:
            space.close()
        if self.pool is not None:
            self.pool.shutdown()


class _Gate:
    """Stop-the-world gate for snapshot boundaries in multi-client runs."""

    def __init__(self):
        self._cv = threading.Condition()
        self._active = 0
        self._paused = 0
        self._want = False
        self._gen = 0
        self.events = 0  # advisory progress counter

    def register(self):
        with self._cv:
            self._active += 1

    def deregister(self):
        with self._cv:
            self._active -= 1
            self._cv.notify_all()

    def checkpoint(self):
        self.events += 1
        if not self._want:
            return
        with self._cv:
            if not self._want:
                return
            gen = self._gen
            self._paused += 1
            self._cv.notify_all()
            while self._want and self._gen == gen:
                self._cv.wait()
            self._paused -= 1
            self._cv.notify_all()

    def hold(self):
        with self._cv:
            self._want = True
            while self._active and self._paused < self._active:
                self._cv.wait(0.2)

    def release(self):
        with self._cv:
            self._want = False
            self._gen += 1
            self._cv.notify_all()

    @property
    def active(self):
        with self._cv:
            return self._active


# ---------------------------------------------------------------------------
# flat replay for baseline timing (the unprotected configuration)

def _flat_replay(events) -> None:
    regions: dict[int, bytearray] = {}
    for ev in events:
        op = ev.op
        if op == "read":
            data = regions[ev.region_id]
            assert ev.offset + ev.length <= len(data)
            data[ev.offset : ev.offset + ev.length]
        elif op == "write":
            regions[ev.region_id][ev.offset : ev.offset + ev.length] = ev.payload
        elif op == "alloc":
            pages = (ev.length + PAGE_SIZE - 1) // PAGE_SIZE
            regions[ev.region_id] = bytearray(pages * PAGE_SIZE)
        elif op == "free":
            del regions[ev.region_id]


# ---------------------------------------------------------------------------
# benchmark runs

@dataclass
class RunResult:
    config: RunConfig
    labels: list[str]
    rows: list[str] = field(default_factory=list)  # METRICS_HEADER rows
    counters: dict[str, tuple] = field(default_factory=dict)
    wall_ns: list[int] = field(default_factory=list)      # one per repeat
    baseline_ns: list[int] = field(default_factory=list)  # one per repeat
    violations: list[str] = field(default_factory=list)
    snapshots: list[DumpSnapshot] = field(default_factory=list)
    key_witness: bytes | None = None  # key of the snapshotted (final) repeat

    @property
    def ok(self) -> bool:
        return not self.violations

    def total(self, field_index: int) -> int:
        """Sum a numeric metrics column (1=faults .. 5=decrypts) over clients."""
        return sum(int(r.split(",")[field_index]) for r in self.rows)


def run_benchmark(
    config: RunConfig,
    traces: list[str],
    labels: list[str] | None = None,
    keysource=os.urandom,
    snapshot_sink=None,
) -> RunResult:
    """Replay traces for `config.clients` clients, `config.repeat` times.

    Counters must be identical across repeats (wall times vary); any
    difference, invariant breach, or failed boundary check lands in
    `result.violations`.  Snapshots from the final repeat are kept when
    snapshot_points > 0.
    """
    if not traces:
        raise TraceError("no traces given")
    labels = labels or [f"trace{i}" for i in range(len(traces))]
    parsed = [parse_trace(t) for t in traces]
    assignment = [parsed[i % len(parsed)] for i in range(config.clients)]
    result = RunResult(config, labels)

    baseline_events = [list(ev) for ev in assignment]
    for _ in range(config.repeat):
        t0 = time.perf_counter_ns()
        for ev in baseline_events:
            _flat_replay(ev)
        result.baseline_ns.append(time.perf_counter_ns() - t0)

    repeat_counters: list[dict[str, tuple]] = []
    for rep in range(config.repeat):
        last = rep == config.repeat - 1
        sim = Simulation(config, keysource=keysource)
        try:
            wall, snaps, problems = _run_once(sim, assignment, config, take_snaps=last)
            result.wall_ns.append(wall)
            result.violations.extend(problems)
            counters = {}
            for space in sim.spaces():
                m = sim.orchestrator.metrics(space.client_id)
                counters[str(space.client_id)] = (
                    m.faults,
                    m.first_touch_faults,
                    m.evictions,
                    m.encrypt_ops,
                    m.decrypt_ops,
                )
            repeat_counters.append(counters)
            if last:
                result.rows = sim.orchestrator.metrics_rows()
                result.counters = counters
                result.snapshots = snaps
                result.key_witness = sim.key_witness
                if snapshot_sink is not None:
                    for i, snap in enumerate(snaps):
                        snapshot_sink(i, snap)
        finally:
            sim.close()

    for rep, counters in enumerate(repeat_counters[1:], 1):
        if counters != repeat_counters[0]:
            result.violations.append(
                f"repeat {rep}: counters differ from repeat 0 (non-deterministic run)"
            )
    return result


def _run_once(sim: Simulation, assignment, config: RunConfig, take_snaps: bool):
    """One repeat: returns (wall_ns, snapshots, violations)."""
    spaces = [sim.new_client(pid) for pid in range(1, config.clients + 1)]
    snaps: list[DumpSnapshot] = []
    problems: list[str] = []
    total_events = sum(len(ev) for ev in assignment)
    rng = np.random.default_rng(config.seed)
    n_points = config.snapshot_points if take_snaps else 0
    boundaries = sorted(
        int(b) for b in rng.integers(0, max(1, total_events), size=n_points)
    )

    def snap_and_check(where):
        problems.extend(sim.check_invariants(where))
        snaps.append(sim.snapshot())

    if config.clients == 1:
        pending = list(boundaries)
        count = 0

        def checkpoint():
            nonlocal count
            while pending and count >= pending[0]:
                pending.pop(0)
                snap_and_check(f"event {count}")
            count += 1

        t0 = time.perf_counter_ns()
        replay(spaces[0], assignment[0], checkpoint=checkpoint if n_points else None)
        wall = time.perf_counter_ns() - t0
        while pending:
            pending.pop(0)
            snap_and_check("end of run")
        return wall, snaps, problems

    # multi-client: one replay thread per client, controller pauses the world
    gate = _Gate()
    errors: list[Exception] = []

    def client_thread(space, events):
        gate.register()
        try:
            replay(space, events, checkpoint=gate.checkpoint)
        except Exception as exc:  # surfaced as a violation below
            errors.append(exc)
        finally:
            gate.deregister()

    threads = [
        threading.Thread(target=client_thread, args=(sp, ev), daemon=True)
        for sp, ev in zip(spaces, assignment)
    ]
    t0 = time.perf_counter_ns()
    for t in threads:
        t.start()
    for target in boundaries:
        while gate.active and gate.events < target:
            time.sleep(0.0005)
        gate.hold()
        snap_and_check(f"~event {gate.events}")
        gate.release()
        if not gate.active:
            break
    for t in threads:
        t.join()
    wall = time.perf_counter_ns() - t0
    for exc in errors:
        problems.append(f"client thread failed: {exc!r}")
    # any snapshot budget left over is taken at the quiesced end state
    for _ in range(len(boundaries) - len(snaps)):
        snap_and_check("end of run")
    return wall, snaps, problems


# ---------------------------------------------------------------------------
# metrics files and trend report

def metrics_csv_text(result: RunResult, label: str) -> str:
    """Spec columns plus '#' metadata comments (gnuplot-friendly)."""
    cfg = result.config
    wall_mean = statistics.fmean(result.wall_ns)
    wall_std = statistics.pstdev(result.wall_ns) if len(result.wall_ns) > 1 else 0.0
    base_mean = statistics.fmean(result.baseline_ns)
    base_std = statistics.pstdev(result.baseline_ns) if len(result.baseline_ns) > 1 else 0.0
    lines = [
        "# pagecrypt-metrics v1",
        f"# label={label} window={cfg.window} clients={cfg.clients} "
        f"stack={'on' if cfg.stack_protection else 'off'} "
        f"crypto={'on' if cfg.crypto else 'off'} repeat={cfg.repeat}",
        f"# wall_ns_mean={wall_mean:.0f} wall_ns_std={wall_std:.0f} "
        f"baseline_ns_mean={base_mean:.0f} baseline_ns_std={base_std:.0f}",
        METRICS_HEADER,
        *result.rows,
    ]
    return "\n".join(lines) + "\n"


@dataclass
class MetricsFile:
    label: str
    window: int
    clients: int
    stack: str
    crypto: str
    wall_ns_mean: float
    baseline_ns_mean: float
    rows: list[dict]

    @property
    def slowdown(self) -> float:
        return self.wall_ns_mean / self.baseline_ns_mean if self.baseline_ns_mean else float("nan")

    def total(self, column: str) -> int:
        return sum(int(r[column]) for r in self.rows)


def parse_metrics_csv(text: str) -> MetricsFile:
    meta: dict[str, str] = {}
    rows: list[dict] = []
    header: list[str] | None = None
    for line in text.splitlines():
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
            continue
        if not line.strip():
            continue
        if header is None:
            header = line.split(",")
            if header != METRICS_HEADER.split(","):
                raise TraceError(f"unexpected metrics header: {line!r}")
            continue
        rows.append(dict(zip(header, line.split(","))))
    if header is None:
        raise TraceError("no metrics header found")
    try:
        return MetricsFile(
            label=meta.get("label", "?"),
            window=int(meta.get("window", 0)),
            clients=int(meta.get("clients", 1)),
            stack=meta.get("stack", "on"),
            crypto=meta.get("crypto", "on"),
            wall_ns_mean=float(meta.get("wall_ns_mean", 0)),
            baseline_ns_mean=float(meta.get("baseline_ns_mean", 0)),
            rows=rows,
        )
    except ValueError as exc:
        raise TraceError(f"bad metrics metadata: {exc}") from None


def report(metrics: list[MetricsFile]) -> str:
    """Trend table: one row per (label, window, clients) with slowdown and
    counter totals.  Gnuplot-compatible whitespace columns."""
    if not metrics:
        raise TraceError("report needs at least one metrics file")
    seen = {}
    for m in metrics:
        key = (m.label, m.window, m.clients)
        other = seen.get(key)
        if other is not None and (other.stack, other.crypto) != (m.stack, m.crypto):
            raise TraceError(f"mismatched configs for {key}: stack/crypto flags differ")
        seen[key] = m
    lines = [
        "# workload window clients slowdown faults first_touch evictions encrypts decrypts"
    ]
    for m in sorted(metrics, key=lambda m: (m.label, -m.window, m.clients)):
        lines.append(
            f"{m.label} {m.window} {m.clients} {m.slowdown:.3f} "
            f"{m.total('faults')} {m.total('first_touch')} {m.total('evictions')} "
            f"{m.total('encrypts')} {m.total('decrypts')}"
        )
        if m.clients > 1:
            for r in m.rows:
                lines.append(
                    f"{m.label}/client{r['client']} {m.window} 1 - "
                    f"{r['faults']} {r['first_touch']} {r['evictions']} "
                    f"{r['encrypts']} {r['decrypts']}"
                )
    return "\n".join(lines) + "\n"
