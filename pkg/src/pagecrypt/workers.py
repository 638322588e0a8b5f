"""Crypto worker pool emulating a GPU-resident cipher service.

Each worker is a long-lived thread owning one bounded multiple-producer,
single-consumer ring and a private 32-byte key slot.  Key slots live outside
the dumpable RAM (the register-file analog); the accounting in
:mod:`pagecrypt.ram` lets the analyzer verify that exactly 32 * n_workers
bytes exist outside the dump and nothing else.

The key enters through a staging buffer that is wiped as soon as every
worker holds its private copy.  Shutting the pool down wipes the key slots;
a shut-down pool cannot be re-keyed or restarted.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field

from . import cipher
from .errors import ContractViolation, PoolError
from .ram import PAGE_SIZE, TAG_SERVER_MISC, RamBuf, TaggedRam
from .store import ClientId

DEFAULT_RING_SLOTS = 64


class Completion:
    """Signaling slot for one request; usable across producer threads."""

    __slots__ = ("_event", "error", "_on_signal")

    def __init__(self, on_signal=None):
        self._event = threading.Event()
        self.error = None
        self._on_signal = on_signal

    def signal(self, error=None) -> None:
        self.error = error
        if self._on_signal is not None:
            self._on_signal()
        self._event.set()

    def wait(self, timeout: float | None = None) -> None:
        if not self._event.wait(timeout):
            raise PoolError("timed out waiting for crypto completion")
        if self.error is not None:
            raise self.error

    @property
    def done(self) -> bool:
        return self._event.is_set()


@dataclass
class CryptoRequest:
    """One page to transform.  `page` is a private working buffer, never
    aliased with store or client residency; the worker transforms it in
    place.  `direction` is advisory: the cipher is involutive."""

    client: ClientId
    vaddr: int
    direction: str  # "encrypt" | "decrypt"
    page: RamBuf
    completion: Completion = field(default_factory=Completion)


class WorkerRing:
    """Bounded MPSC ring: many producers, exactly one consumer.

    Producers block when the ring is full (back-pressure, no loss); the
    consumer blocks when it is empty.  FIFO order is global, hence also per
    producer.
    """

    def __init__(self, capacity: int = DEFAULT_RING_SLOTS):
        if capacity < 1 or capacity & (capacity - 1):
            raise ContractViolation(f"ring capacity {capacity} not a power of two")
        self.capacity = capacity
        self._slots = [None] * capacity
        self._head = 0  # next slot the consumer reads
        self._tail = 0  # next slot a producer writes
        self._cv = threading.Condition()
        self._open = True

    def push(self, req: CryptoRequest) -> None:
        with self._cv:
            while self._open and self._tail - self._head == self.capacity:
                self._cv.wait()
            if not self._open:
                raise PoolError("ring is shut down")
            self._slots[self._tail % self.capacity] = req
            self._tail += 1
            self._cv.notify_all()

    def pop(self):
        """Single consumer only.  Returns None when the ring shuts down empty."""
        with self._cv:
            while self._open and self._head == self._tail:
                self._cv.wait()
            if self._head == self._tail:
                return None
            req = self._slots[self._head % self.capacity]
            self._slots[self._head % self.capacity] = None
            self._head += 1
            self._cv.notify_all()
            return req

    def shutdown(self) -> None:
        with self._cv:
            self._open = False
            self._cv.notify_all()

    def __len__(self) -> int:
        with self._cv:
            return self._tail - self._head


class _Worker:
    """Service loop bound to one ring and one private key slot."""

    def __init__(self, index: int, ring: WorkerRing, key_slot: RamBuf):
        self.index = index
        self.ring = ring
        self.key_slot = key_slot
        self.thread = threading.Thread(
            target=self._run, name=f"crypto-worker-{index}", daemon=True
        )

    def _run(self) -> None:
        while True:
            req = self.ring.pop()
            if req is None:
                return
            try:
                req.page.data[:] = cipher.crypt_page(
                    self.key_slot.data, req.vaddr, req.client.pid, req.page.data
                )
            except Exception as exc:  # surface worker-side bugs to the submitter
                req.completion.signal(exc)
            else:
                req.completion.signal()


class WorkerPool:
    """N independent crypto service loops with client-affine routing."""

    def __init__(
        self,
        n_workers: int | None = None,
        keysource=os.urandom,
        ram: TaggedRam | None = None,
        ring_capacity: int = DEFAULT_RING_SLOTS,
        debug_leak_key: bool = False,
    ):
        if n_workers is None:
            n_workers = os.cpu_count() or 1  # available hardware parallelism
        if n_workers < 1:
            raise ContractViolation(f"n_workers must be >= 1, got {n_workers}")
        self.ram = ram if ram is not None else TaggedRam()
        self.n_workers = n_workers
        self._workers: list[_Worker] = []
        self._keyed = False
        self._shut_down = False
        self._in_flight = 0
        self._lock = threading.Lock()
        for i in range(n_workers):
            slot = self.ram.alloc_private(cipher.KEY_SIZE)
            self._workers.append(_Worker(i, WorkerRing(ring_capacity), slot))
        self.install_key(keysource, debug_leak_key=debug_leak_key)
        for w in self._workers:
            w.thread.start()

    def install_key(self, keysource, debug_leak_key: bool = False) -> None:
        """Stage the master key, copy it into each worker slot, wipe the stage.

        Runs once per pool; a second install (or any install after shutdown)
        is an error because a live pool's key must never be replaced.
        """
        if self._keyed:
            raise PoolError("pool already initialized with a key")
        if self._shut_down:
            raise PoolError("pool is shut down")
        staging = self.ram.alloc(TAG_SERVER_MISC, cipher.KEY_SIZE)
        try:
            material = keysource(cipher.KEY_SIZE)
        except Exception as exc:
            self.ram.free(staging)
            raise PoolError(f"keysource failed: {exc}") from exc
        if len(material) != cipher.KEY_SIZE:
            self.ram.free(staging)
            raise PoolError(f"keysource yielded {len(material)} bytes, need {cipher.KEY_SIZE}")
        staging.data[:] = material
        for w in self._workers:
            w.key_slot.data[:] = staging.data
        if debug_leak_key:
            # positive control for the key scanner: deliberately keep a copy
            # in dump-visible server memory
            leak = self.ram.alloc(TAG_SERVER_MISC, cipher.KEY_SIZE)
            leak.data[:] = staging.data
        self.ram.free(staging)  # the installer's copy is purged
        self._keyed = True

    def route(self, client: ClientId) -> int:
        """Stable client -> worker assignment (preserves per-client order)."""
        return ((client.pid * 2654435761) ^ client.epoch) % self.n_workers

    def submit(self, client: ClientId, vaddr: int, direction: str, page: RamBuf) -> Completion:
        """Enqueue one page; returns immediately with a completion handle."""
        if self._shut_down:
            raise PoolError("submit on a shut-down pool")
        if direction not in ("encrypt", "decrypt"):
            raise ContractViolation(f"bad direction {direction!r}")
        if len(page.data) != PAGE_SIZE:
            raise ContractViolation("crypto requests operate on whole pages")
        completion = Completion(on_signal=self._request_done)
        req = CryptoRequest(client, vaddr, direction, page, completion)
        with self._lock:
            self._in_flight += 1
        self._workers[self.route(client)].ring.push(req)
        return completion

    def _request_done(self) -> None:
        with self._lock:
            self._in_flight -= 1

    def crypt(self, client: ClientId, vaddr: int, direction: str, page: RamBuf) -> None:
        """Submit and wait: the synchronous fault-path helper."""
        self.submit(client, vaddr, direction, page).wait()

    @property
    def in_flight(self) -> int:
        with self._lock:
            return self._in_flight

    @property
    def running(self) -> bool:
        return self._keyed and not self._shut_down

    def shutdown(self) -> None:
        """Wipe every key slot and stop the loops.  Idempotent; errors if
        requests are still in flight."""
        if self._shut_down:
            return
        if self.in_flight:
            raise PoolError(f"{self.in_flight} requests in flight")
        self._shut_down = True
        for w in self._workers:
            w.ring.shutdown()
        for w in self._workers:
            w.thread.join(timeout=10)
        for w in self._workers:
            w.key_slot.wipe()
            self.ram.free(w.key_slot)
