"""Cold-boot attack emulator: dump all simulated RAM and measure exposure.

A snapshot is a deep copy of every tagged buffer, taken stop-the-world at an
event boundary.  Scans answer the attacker's questions: which sentinel
plaintext markers survive anywhere in the dump, and does any 16-byte window
of the master key appear?  A compliant run answers "at most one window of
pages per client" and "never".

The dump is assumed perfect (no bit decay), which is the attacker's best
case and therefore the conservative test.
"""

from __future__ import annotations

import struct
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, ProtocolError
from .ram import (
    PAGE_SIZE,
    TAG_CLIENT_RESIDENT,
    TAG_FOR_ID,
    TAG_IDS,
    TAG_STORE_CIPHERTEXT,
    TaggedRam,
)
from .cipher import MasterKey

MIN_MARKER_LEN = 32  # bounds accidental-match probability below 2^-256

_RECORD_HEADER = struct.Struct("<BQ")


@dataclass(frozen=True)
class SnapshotRecord:
    tag: str
    data: bytes
    owner: object = None  # ClientId when known; lost on serialization


@dataclass(frozen=True)
class DumpSnapshot:
    records: tuple[SnapshotRecord, ...]
    timestamp: float
    private_bytes: int = 0  # accounted storage outside the dump (key slots)

    @property
    def total_bytes(self) -> int:
        return sum(len(r.data) for r in self.records)

    def by_tag(self, tag: str):
        return [r for r in self.records if r.tag == tag]

    def tag_bytes(self, tag: str) -> int:
        return sum(len(r.data) for r in self.records if r.tag == tag)


@dataclass(frozen=True)
class MarkerHit:
    marker_id: int
    region_tag: str
    record_index: int
    offset: int
    owner: object = None


@dataclass
class ExposureReport:
    plaintext_bytes_found: int = 0
    per_client_resident_pages: dict = field(default_factory=dict)
    key_found: bool = False
    marker_hits: list = field(default_factory=list)
    ciphertext_hits: int = 0  # marker occurrences inside stored ciphertext

    def hits_by_tag(self) -> Counter:
        return Counter(h.region_tag for h in self.marker_hits)


def take_snapshot(ram: TaggedRam) -> DumpSnapshot:
    """Deep-copy all dump-visible RAM.  Caller guarantees quiescence."""
    records = tuple(
        SnapshotRecord(buf.tag, bytes(buf.data), buf.owner) for buf in ram.buffers()
    )
    return DumpSnapshot(records, time.time(), ram.private_bytes())


def scan_markers(snap: DumpSnapshot, markers) -> ExposureReport:
    """Find every occurrence of every marker in every region.

    Markers must be pairwise distinct and at least 32 bytes (false-positive
    control).  Occurrences inside store_ciphertext count as plaintext leaks:
    ciphertext must not contain plaintext runs.
    """
    markers = list(markers)
    if len(set(markers)) != len(markers):
        raise ContractViolation("markers must be pairwise distinct")
    for m in markers:
        if len(m) < MIN_MARKER_LEN:
            raise ContractViolation(
                f"marker of {len(m)} bytes is below the {MIN_MARKER_LEN}-byte minimum"
            )
    report = ExposureReport()
    for idx, rec in enumerate(snap.records):
        if rec.tag == TAG_CLIENT_RESIDENT and rec.owner is not None:
            report.per_client_resident_pages[rec.owner] = (
                report.per_client_resident_pages.get(rec.owner, 0)
                + len(rec.data) // PAGE_SIZE
            )
        for mid, marker in enumerate(markers):
            pos = rec.data.find(marker)
            while pos != -1:
                report.marker_hits.append(
                    MarkerHit(mid, rec.tag, idx, pos, rec.owner)
                )
                report.plaintext_bytes_found += len(marker)
                if rec.tag == TAG_STORE_CIPHERTEXT:
                    report.ciphertext_hits += 1
                pos = rec.data.find(marker, pos + 1)
    return report


def scan_key(snap: DumpSnapshot, key) -> bool:
    """True iff any 16-byte substring of the key appears anywhere in the dump.

    Checks all 17 sliding windows of the 32-byte key at every alignment.
    Must be False for a compliant run; the test harness retains the key
    out of band to call this.
    """
    if isinstance(key, MasterKey):
        key = bytes(key.view())
    if len(key) != 32:
        raise ContractViolation(f"key must be 32 bytes, got {len(key)}")
    windows = [bytes(key[i : i + 16]) for i in range(17)]
    for rec in snap.records:
        for w in windows:
            if rec.data.find(w) != -1:
                return True
    return False


def check_accounting(snap: DumpSnapshot, n_workers: int) -> None:
    """Every byte of simulated RAM is tagged except the worker key slots."""
    expected = 32 * n_workers
    if snap.private_bytes != expected:
        raise ContractViolation(
            f"untagged bytes {snap.private_bytes} != 32 x {n_workers} worker key slots"
        )


def ciphertext_histogram_ok(snap: DumpSnapshot, factor: float = 3.0) -> bool:
    """Weak indistinguishability smoke test over stored ciphertext.

    With at least 1 MiB of ciphertext, no byte-value bucket may exceed
    `factor` times the uniform expectation.  Not a cryptographic claim.
    """
    blobs = [r.data for r in snap.by_tag(TAG_STORE_CIPHERTEXT)]
    total = sum(len(b) for b in blobs)
    if total < 1 << 20:
        raise ContractViolation(f"need >= 1 MiB of ciphertext, have {total} bytes")
    counts = np.zeros(256, dtype=np.int64)
    for b in blobs:
        counts += np.bincount(np.frombuffer(b, dtype=np.uint8), minlength=256)
    return bool(counts.max() <= factor * total / 256)


# ---------------------------------------------------------------------------
# serialization: concatenated (tag u8, len u64 LE, bytes) records

def save_snapshot(snap: DumpSnapshot, path) -> None:
    with open(path, "wb") as f:
        for rec in snap.records:
            f.write(_RECORD_HEADER.pack(TAG_IDS[rec.tag], len(rec.data)))
            f.write(rec.data)


def load_snapshot(path) -> DumpSnapshot:
    records = []
    with open(path, "rb") as f:
        raw = f.read()
    pos = 0
    while pos < len(raw):
        if pos + _RECORD_HEADER.size > len(raw):
            raise ProtocolError("truncated snapshot record header")
        tag_id, length = _RECORD_HEADER.unpack_from(raw, pos)
        pos += _RECORD_HEADER.size
        if tag_id not in TAG_FOR_ID:
            raise ProtocolError(f"unknown snapshot tag id {tag_id}")
        if pos + length > len(raw):
            raise ProtocolError("truncated snapshot record body")
        records.append(SnapshotRecord(TAG_FOR_ID[tag_id], raw[pos : pos + length]))
        pos += length
    return DumpSnapshot(tuple(records), time.time())


# ---------------------------------------------------------------------------
# reporting

def report_text(report: ExposureReport) -> str:
    lines = [
        "exposure report",
        f"  plaintext marker bytes found: {report.plaintext_bytes_found}",
        f"  marker hits in ciphertext:    {report.ciphertext_hits}",
        f"  master key found:             {'YES' if report.key_found else 'no'}",
    ]
    if report.per_client_resident_pages:
        lines.append("  resident plaintext pages per client:")
        for client, pages in sorted(
            report.per_client_resident_pages.items(), key=lambda kv: str(kv[0])
        ):
            lines.append(f"    {client}: {pages}")
    if report.marker_hits:
        lines.append("  marker hits (marker, region, record, offset):")
        for h in report.marker_hits:
            lines.append(f"    m{h.marker_id} {h.region_tag} #{h.record_index} +{h.offset}")
    else:
        lines.append("  no marker hits")
    return "\n".join(lines) + "\n"


def report_csv(report: ExposureReport) -> str:
    rows = ["marker_id,region_tag,record_index,offset"]
    rows += [
        f"{h.marker_id},{h.region_tag},{h.record_index},{h.offset}"
        for h in report.marker_hits
    ]
    return "\n".join(rows) + "\n"
