"""Protected-client model: regions, demand paging, fault generation.

A client's address space is a set of page-aligned regions handed out by a
deterministic bump allocator.  Accesses to pages that are not plaintext
resident raise a fault to the server; the server answers with the page
contents (zero on first touch) and may claw back the oldest resident page
through the transfer buffer on the way.  Freed memory is wiped before it is
given back.

Stack-kind regions exist to model the one part of the address space that is
optionally protected: while stack protection is off they bypass the fault
machinery entirely and behave like ordinary flat memory.  The toggle mirrors
a process-start environment switch and therefore cannot be flipped after the
first stack access.

Trace format (one event per line, '#' starts a comment line):

    alloc <id> <len> [stack]
    free <id>
    write <id> <offset> <hexbytes>
    read <id> <offset> <len>
    stack <on|off>

where <id> must equal the 0-based order of the alloc events.  Replay is
bit-exact: the same trace always produces the same addresses, faults and
final memory image.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import (
    AllocationError,
    ContractViolation,
    SegmentationViolation,
    TraceError,
)
from .ram import PAGE_SIZE, TAG_CLIENT_RESIDENT, TaggedRam
from .transport import ControlChannel, ControlMsg, MsgType

BASE_VADDR = 0x0000_0001_0000_0000
_VADDR_LIMIT = 2**64 - PAGE_SIZE

KIND_ANON = "anon"
KIND_STACK = "stack"


@dataclass
class Region:
    region_id: int
    base: int
    length: int  # page multiple
    kind: str
    registered: bool = False  # REGION_ADD sent to the server

    @property
    def end(self) -> int:
        return self.base + self.length

    def pages(self):
        return range(self.base, self.end, PAGE_SIZE)


@dataclass(frozen=True)
class AccessEvent:
    """One parsed trace event."""

    op: str  # alloc | free | read | write | stack
    region_id: int = -1
    offset: int = 0
    length: int = 0
    payload: bytes = b""
    kind: str = KIND_ANON
    flag: bool = True  # for 'stack' toggle lines


class ClientSpace:
    """One protected client wired to a server over an in-process channel."""

    def __init__(self, server, ram: TaggedRam, pid: int, stack_protection: bool = True):
        self._server = server
        self._ram = ram
        self.pid = pid
        self._channel = ControlChannel(ram)
        self._channel.transmit(ControlMsg(MsgType.REGISTER, pid=pid))
        self.client_id, self._transfer = server.register_client(pid, self._channel, self)
        self._regions: dict[int, Region] = {}
        self._next_region_id = 0
        self._bump = BASE_VADDR
        self._resident: dict[int, object] = {}     # protected plaintext pages
        self._unprotected: dict[int, object] = {}  # stack pages w/o protection
        self._stack_protection = stack_protection
        self._stack_touched = False
        self._closed = False

    # -- allocation ----------------------------------------------------------

    def alloc(self, length: int, kind: str = KIND_ANON) -> Region:
        """Allocate a fresh region, rounded up to whole pages.

        No pages become resident here: everything is demand paged, so a
        region costs zero faults until first access.
        """
        self._check_open()
        if length <= 0:
            raise ContractViolation(f"alloc length must be positive, got {length}")
        if kind not in (KIND_ANON, KIND_STACK):
            raise ContractViolation(f"unknown region kind {kind!r}")
        length = (length + PAGE_SIZE - 1) // PAGE_SIZE * PAGE_SIZE
        if self._bump + length > _VADDR_LIMIT:
            raise AllocationError("simulated address space exhausted")
        region = Region(self._next_region_id, self._bump, length, kind)
        self._next_region_id += 1
        self._bump += length
        self._regions[region.region_id] = region
        if kind == KIND_ANON:
            self._register_region(region)
        # stack regions are registered lazily at first access, once the
        # protection toggle is frozen
        return region

    def _register_region(self, region: Region) -> None:
        self._channel.transmit(
            ControlMsg.for_client(
                MsgType.REGION_ADD, self.client_id, region.base, region.length
            )
        )
        self._server.region_add(self.client_id, region.base, region.length)
        region.registered = True

    def free(self, region: Region) -> None:
        """Release a region: wipe resident pages, drop server-side state."""
        self._check_open()
        if self._regions.get(region.region_id) is not region:
            raise ContractViolation(f"double free of region {region.region_id}")
        for vaddr in region.pages():
            buf = self._resident.pop(vaddr, None)
            if buf is not None:
                self._ram.free(buf)
            buf = self._unprotected.pop(vaddr, None)
            if buf is not None:
                self._ram.free(buf)
        if region.registered:
            self._channel.transmit(
                ControlMsg.for_client(
                    MsgType.REGION_REMOVE, self.client_id, region.base, region.length
                )
            )
            self._server.region_remove(self.client_id, region.base)
        del self._regions[region.region_id]

    # -- stack toggle ----------------------------------------------------------

    def set_stack_protection(self, on: bool) -> None:
        """Select whether stack pages join the fault machinery.

        Mirrors process-start environment semantics: flipping it after the
        first stack access is a contract violation.
        """
        self._check_open()
        if self._stack_touched and on != self._stack_protection:
            raise ContractViolation("stack protection toggled after first stack access")
        self._stack_protection = on

    @property
    def stack_protection(self) -> bool:
        return self._stack_protection

    # -- access ----------------------------------------------------------------

    def access(self, vaddr: int, is_write: bool, byte: int | None = None):
        """Single-byte access at an absolute address (the MMU-level op)."""
        region = self._region_at(vaddr)
        off = vaddr - region.base
        if is_write:
            if byte is None:
                raise ContractViolation("write access needs a payload byte")
            self.write_region(region, off, bytes([byte]))
            return None
        return self.read_region(region, off, 1)[0]

    def read_region(self, region: Region, offset: int, length: int) -> bytes:
        self._check_live(region, offset, length)
        vaddr = region.base + offset
        page = vaddr & ~(PAGE_SIZE - 1)
        end = vaddr + length
        if end <= page + PAGE_SIZE:  # common case: within one page
            buf = self._page_for_access(region, page)
            start = vaddr - page
            return bytes(buf.data[start : start + length])
        out = bytearray()
        while vaddr < end:
            page = vaddr & ~(PAGE_SIZE - 1)
            take = min(end, page + PAGE_SIZE) - vaddr
            buf = self._page_for_access(region, page)
            start = vaddr - page
            out += buf.data[start : start + take]
            vaddr += take
        return bytes(out)

    def write_region(self, region: Region, offset: int, data) -> None:
        self._check_live(region, offset, len(data))
        vaddr = region.base + offset
        page = vaddr & ~(PAGE_SIZE - 1)
        end = vaddr + len(data)
        if end <= page + PAGE_SIZE:
            buf = self._page_for_access(region, page)
            start = vaddr - page
            buf.data[start : start + len(data)] = data
            return
        pos = 0
        while vaddr < end:
            page = vaddr & ~(PAGE_SIZE - 1)
            take = min(end, page + PAGE_SIZE) - vaddr
            buf = self._page_for_access(region, page)
            start = vaddr - page
            buf.data[start : start + take] = data[pos : pos + take]
            vaddr += take
            pos += take

    def _page_for_access(self, region: Region, page_vaddr: int):
        if region.kind == KIND_STACK:
            if not self._stack_touched:
                self._stack_touched = True
            if not self._stack_protection:
                buf = self._unprotected.get(page_vaddr)
                if buf is None:  # local demand-zero page, no fault raised
                    buf = self._ram.alloc(
                        TAG_CLIENT_RESIDENT, PAGE_SIZE, owner=self.client_id
                    )
                    self._unprotected[page_vaddr] = buf
                return buf
            if not region.registered:
                self._register_region(region)
        buf = self._resident.get(page_vaddr)
        if buf is None:
            self._channel.transmit(
                ControlMsg.for_client(
                    MsgType.FAULT, self.client_id, page_vaddr, PAGE_SIZE
                )
            )
            plain = self._server.fault(self.client_id, page_vaddr)
            buf = self._ram.alloc(TAG_CLIENT_RESIDENT, PAGE_SIZE, owner=self.client_id)
            buf.data[:] = plain
            self._resident[page_vaddr] = buf
        return buf

    # -- server-driven eviction (the data-thread role) ---------------------------

    def service_evict(self, vaddr: int) -> None:
        """Hand a resident page to the server and drop the local copy.

        The page leaves residency only after the transfer buffer accepted
        it, so a failed transfer leaves the client fully consistent.
        """
        buf = self._resident.get(vaddr)
        if buf is None:
            raise ContractViolation(f"evict request for non-resident page {vaddr:#x}")
        self._transfer.write(bytes(buf.data))
        self._ram.free(buf)
        del self._resident[vaddr]
        self._channel.transmit(
            ControlMsg.for_client(MsgType.EVICT_DONE, self.client_id, vaddr, PAGE_SIZE)
        )

    # -- lifecycle ----------------------------------------------------------------

    def close(self) -> None:
        """Client exit: wipe all plaintext, say goodbye, unregister."""
        if self._closed:
            return
        for buf in self._resident.values():
            self._ram.free(buf)
        self._resident.clear()
        for buf in self._unprotected.values():
            self._ram.free(buf)
        self._unprotected.clear()
        self._regions.clear()
        self._channel.transmit(ControlMsg.for_client(MsgType.BYE, self.client_id))
        self._server.unregister_client(self.client_id)
        self._channel.close()
        self._closed = True

    # -- helpers -------------------------------------------------------------------

    def _region_at(self, vaddr: int) -> Region:
        for region in self._regions.values():
            if region.base <= vaddr < region.end:
                return region
        raise SegmentationViolation(f"access outside registered regions: {vaddr:#x}")

    def _check_live(self, region: Region, offset: int, length: int) -> None:
        self._check_open()
        if self._regions.get(region.region_id) is not region:
            raise SegmentationViolation(f"region {region.region_id} is not mapped")
        if offset < 0 or length < 0 or offset + length > region.length:
            raise SegmentationViolation(
                f"access [{offset}, {offset + length}) outside region of {region.length} bytes"
            )

    def _check_open(self) -> None:
        if self._closed:
            raise ContractViolation("client is closed")

    def resident_pages(self) -> int:
        return len(self._resident)

    def regions(self) -> list[Region]:
        return sorted(self._regions.values(), key=lambda r: r.region_id)

    def region(self, region_id: int) -> Region | None:
        return self._regions.get(region_id)


# ---------------------------------------------------------------------------
# trace parsing / formatting / replay

def parse_trace(text: str) -> list[AccessEvent]:
    """Parse a trace; ids must appear in allocation order starting at 0."""
    events = []
    next_alloc = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        op = parts[0]
        try:
            if op == "alloc":
                if len(parts) == 4 and parts[3] == KIND_STACK:
                    kind = KIND_STACK
                elif len(parts) == 3:
                    kind = KIND_ANON
                else:
                    raise ValueError("alloc takes <id> <len> [stack]")
                rid, length = int(parts[1]), int(parts[2])
                if rid != next_alloc:
                    raise ValueError(f"alloc id {rid} out of order (expected {next_alloc})")
                next_alloc += 1
                events.append(AccessEvent("alloc", rid, length=length, kind=kind))
            elif op == "free":
                (rid,) = map(int, parts[1:])
                events.append(AccessEvent("free", rid))
            elif op == "write":
                rid, offset = int(parts[1]), int(parts[2])
                payload = bytes.fromhex(parts[3])
                if not payload:
                    raise ValueError("empty write payload")
                events.append(AccessEvent("write", rid, offset, len(payload), payload))
            elif op == "read":
                rid, offset, length = map(int, parts[1:])
                events.append(AccessEvent("read", rid, offset, length))
            elif op == "stack":
                if parts[1] not in ("on", "off"):
                    raise ValueError("stack takes on|off")
                events.append(AccessEvent("stack", flag=parts[1] == "on"))
            else:
                raise ValueError(f"unknown op {op!r}")
        except (ValueError, IndexError) as exc:
            raise TraceError(f"line {lineno}: {exc}") from None
    return events


def format_event(ev: AccessEvent) -> str:
    if ev.op == "alloc":
        suffix = f" {KIND_STACK}" if ev.kind == KIND_STACK else ""
        return f"alloc {ev.region_id} {ev.length}{suffix}"
    if ev.op == "free":
        return f"free {ev.region_id}"
    if ev.op == "write":
        return f"write {ev.region_id} {ev.offset} {ev.payload.hex()}"
    if ev.op == "read":
        return f"read {ev.region_id} {ev.offset} {ev.length}"
    if ev.op == "stack":
        return f"stack {'on' if ev.flag else 'off'}"
    raise TraceError(f"unknown event op {ev.op!r}")


def replay(space: ClientSpace, events, checkpoint=None) -> int:
    """Drive a client through parsed events; returns the event count.

    `checkpoint`, when given, is invoked between events (snapshot gate).
    """
    handles: dict[int, Region] = {}
    read_region = space.read_region
    write_region = space.write_region
    for n, ev in enumerate(events):
        if checkpoint is not None:
            checkpoint()
        op = ev.op
        if op == "read":
            region = handles.get(ev.region_id)
            if region is None:
                raise SegmentationViolation(f"read of unmapped region {ev.region_id}")
            read_region(region, ev.offset, ev.length)
        elif op == "write":
            region = handles.get(ev.region_id)
            if region is None:
                raise SegmentationViolation(f"write to unmapped region {ev.region_id}")
            write_region(region, ev.offset, ev.payload)
        elif op == "alloc":
            handles[ev.region_id] = space.alloc(ev.length, ev.kind)
        elif op == "free":
            region = handles.pop(ev.region_id, None)
            if region is None:
                raise TraceError(f"free of unknown region {ev.region_id}")
            space.free(region)
        elif op == "stack":
            space.set_stack_protection(ev.flag)
    return len(events)
