"""The server: fault resolution, window-driven eviction, page movement.

One handler context exists per client; the fault -> resolve -> evict
sequence for a client is strictly serialized within it (in simulator mode it
runs on the client's own thread).  Different clients interact only through
the shared worker rings, so their counters are independent of scheduling.

Page life cycle: a faulting page is staged in a per-client scratch buffer
(zero page on first touch, decrypted ciphertext otherwise), the window
admits it, any evicted page travels client -> transfer buffer -> scratch ->
worker pool -> ciphertext store, and finally the staged plaintext is
installed at the client.  Both scratch buffers are wiped before the fault
returns, so between events the server holds no plaintext.
"""

from __future__ import annotations

import itertools
import threading
import time
from bisect import bisect_right, insort
from dataclasses import dataclass, field

from .errors import ContractViolation, ProtocolError
from .ram import PAGE_SIZE, TAG_SERVER_MISC, TaggedRam
from .store import ClientId, EncryptedPageStore
from .transport import ControlChannel, ControlMsg, MsgType, TransferBuffer
from .window import SlidingWindow
from .workers import WorkerPool

METRICS_HEADER = "client,faults,first_touch,evictions,encrypts,decrypts,fault_ns_total,crypto_ns_total"


@dataclass(frozen=True)
class FaultEvent:
    client: ClientId
    vaddr: int
    timestamp: int


@dataclass
class Metrics:
    """Per-client counters.  Identities: decrypts = faults - first_touch,
    encrypts = evictions (frees discard plaintext without encrypting)."""

    faults: int = 0
    first_touch_faults: int = 0
    evictions: int = 0
    encrypt_ops: int = 0
    decrypt_ops: int = 0
    fault_ns_total: int = 0
    crypto_ns_total: int = 0
    frozen: bool = False

    def check_identities(self) -> None:
        assert self.decrypt_ops == self.faults - self.first_touch_faults
        assert self.encrypt_ops == self.evictions

    def row(self, client: ClientId) -> str:
        return (
            f"{client},{self.faults},{self.first_touch_faults},{self.evictions},"
            f"{self.encrypt_ops},{self.decrypt_ops},{self.fault_ns_total},{self.crypto_ns_total}"
        )


@dataclass
class _ClientState:
    channel: ControlChannel
    data_port: object  # must expose service_evict(vaddr)
    window: SlidingWindow
    transfer: TransferBuffer
    metrics: Metrics
    scratch_fault: object
    scratch_evict: object
    region_bases: list = field(default_factory=list)
    region_ends: dict = field(default_factory=dict)  # base -> end


class Orchestrator:
    """Resolves faults for registered clients and enforces the window bound."""

    def __init__(
        self,
        ram: TaggedRam,
        pool: WorkerPool | None = None,
        window_capacity: int = 16,
    ):
        self.ram = ram
        self.pool = pool
        self.window_capacity = window_capacity
        SlidingWindow(window_capacity)  # validate range up front
        self.store = EncryptedPageStore(ram)
        self._clients: dict[ClientId, _ClientState] = {}
        self._retired: dict[ClientId, Metrics] = {}
        self._epochs: dict[int, int] = {}
        self._clock = itertools.count()
        self._reg_lock = threading.Lock()

    # -- registration -------------------------------------------------------

    def register_client(self, pid: int, channel: ControlChannel, data_port) -> tuple[ClientId, TransferBuffer]:
        """Create (pid, epoch) identity, empty window/store, transfer buffer.

        The caller has already sent REGISTER on the channel; the ACK carrying
        the transfer buffer id is sent here.
        """
        with self._reg_lock:
            epoch = self._epochs.get(pid, 0)
            self._epochs[pid] = epoch + 1
            client = ClientId(pid, epoch)
            st = _ClientState(
                channel=channel,
                data_port=data_port,
                window=SlidingWindow(self.window_capacity),
                transfer=TransferBuffer(self.ram, owner=client),
                metrics=Metrics(),
                scratch_fault=self.ram.alloc(TAG_SERVER_MISC, PAGE_SIZE, owner=client),
                scratch_evict=self.ram.alloc(TAG_SERVER_MISC, PAGE_SIZE, owner=client),
            )
            self._clients[client] = st
        channel.transmit(
            ControlMsg.for_client(MsgType.REGISTER_ACK, client, len=st.transfer.buffer_id)
        )
        return client, st.transfer

    def unregister_client(self, client: ClientId) -> None:
        """Drop all server-side state; wipe everything; freeze the metrics."""
        st = self._clients.pop(client, None)
        if st is None:
            return  # unknown or already unregistered
        self.store.drop_client(client)
        st.window.clear()
        st.transfer.close()
        self.ram.free(st.scratch_fault)
        self.ram.free(st.scratch_evict)
        st.metrics.frozen = True
        self._retired[client] = st.metrics

    # -- region bookkeeping --------------------------------------------------

    def region_add(self, client: ClientId, base: int, length: int) -> None:
        st = self._state(client)
        if base % PAGE_SIZE or length % PAGE_SIZE or length <= 0:
            raise ProtocolError(f"bad region {base:#x}+{length:#x}")
        i = bisect_right(st.region_bases, base)
        if i and st.region_ends[st.region_bases[i - 1]] > base:
            raise ProtocolError("overlapping region")
        if i < len(st.region_bases) and st.region_bases[i] < base + length:
            raise ProtocolError("overlapping region")
        insort(st.region_bases, base)
        st.region_ends[base] = base + length

    def region_remove(self, client: ClientId, base: int) -> None:
        """Forget a region: drop its window entries and wipe its ciphertext."""
        st = self._state(client)
        end = st.region_ends.pop(base, None)
        if end is None:
            raise ProtocolError(f"no region at {base:#x}")
        st.region_bases.remove(base)
        for vaddr in range(base, end, PAGE_SIZE):
            st.window.remove(vaddr)
            if self.store.contains(client, vaddr):
                self.store.remove(client, vaddr)

    def _registered(self, st: _ClientState, vaddr: int) -> bool:
        i = bisect_right(st.region_bases, vaddr)
        return bool(i) and vaddr < st.region_ends[st.region_bases[i - 1]]

    # -- fault handling ------------------------------------------------------

    def fault(self, client: ClientId, vaddr: int) -> bytes:
        """Entry point for a client fault; stamps the event and handles it."""
        return self.handle_fault(FaultEvent(client, vaddr, next(self._clock)))

    def handle_fault(self, ev: FaultEvent) -> bytes:
        """Resolve one missing-page fault; returns the plaintext to install.

        First touch installs a zero page and touches no ciphertext; a
        refault decrypts the stored page and removes the (now stale) store
        entry, so a page is never both resident and in the store.  Any
        eviction forced by window admission completes before returning.
        """
        t0 = time.perf_counter_ns()
        st = self._state(ev.client)
        m = st.metrics
        vaddr = ev.vaddr
        if not self._registered(st, vaddr):
            raise ProtocolError(f"fault for unregistered page {vaddr:#x}")
        scratch = st.scratch_fault
        ct = self.store.lookup(ev.client, vaddr)
        if ct is None:
            m.first_touch_faults += 1  # zero page: scratch is already clear
        else:
            scratch.data[:] = ct
            self.store.remove(ev.client, vaddr)
            tc = time.perf_counter_ns()
            if self.pool is not None:
                self.pool.crypt(ev.client, vaddr, "decrypt", scratch)
            m.decrypt_ops += 1
            m.crypto_ns_total += time.perf_counter_ns() - tc
        evicted = st.window.admit(vaddr)
        if evicted is not None:
            self.evict_page(ev.client, evicted, _already_out=True)
        plain = bytes(scratch.data)
        scratch.wipe()
        m.faults += 1
        st.channel.transmit(
            ControlMsg.for_client(MsgType.RESOLVE, ev.client, vaddr, PAGE_SIZE)
        )
        m.fault_ns_total += time.perf_counter_ns() - t0
        return plain

    def evict_page(self, client: ClientId, vaddr: int, _already_out: bool = False) -> None:
        """Pull a resident page back from the client, encrypt, store.

        The client wipes and drops its copy the moment the transfer buffer
        holds the data; if the transfer itself fails the client still owns
        the page and the error propagates to the fault path.
        """
        st = self._state(client)
        if not _already_out:
            if not st.window.resident(vaddr):
                raise ContractViolation(f"evict of non-window page {vaddr:#x}")
            st.window.remove(vaddr)
        st.channel.transmit(
            ControlMsg.for_client(MsgType.EVICT_REQ, client, vaddr, PAGE_SIZE)
        )
        st.data_port.service_evict(vaddr)
        page = st.transfer.read()
        scratch = st.scratch_evict
        scratch.data[:] = page
        m = st.metrics
        tc = time.perf_counter_ns()
        if self.pool is not None:
            self.pool.crypt(client, vaddr, "encrypt", scratch)
        m.encrypt_ops += 1
        m.crypto_ns_total += time.perf_counter_ns() - tc
        self.store.insert(client, vaddr, scratch.data)
        scratch.wipe()
        m.evictions += 1

    # -- introspection and reporting ----------------------------------------

    def _state(self, client: ClientId) -> _ClientState:
        st = self._clients.get(client)
        if st is None:
            raise ProtocolError(f"unknown client {client}")
        return st

    def clients(self):
        return list(self._clients)

    def window_size(self, client: ClientId) -> int:
        return len(self._state(client).window)

    def transfer_buffers(self):
        return [st.transfer for st in self._clients.values()]

    def metrics(self, client: ClientId) -> Metrics:
        st = self._clients.get(client)
        if st is not None:
            return st.metrics
        if client in self._retired:
            return self._retired[client]
        raise ProtocolError(f"unknown client {client}")

    def metrics_rows(self) -> list[str]:
        rows = [st.metrics.row(c) for c, st in sorted(self._clients.items())]
        rows += [m.row(c) for c, m in sorted(self._retired.items())]
        return rows

    def metrics_csv(self) -> str:
        return "\n".join([METRICS_HEADER, *self.metrics_rows()]) + "\n"
