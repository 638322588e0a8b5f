"""Per-client ordered map from page virtual address to ciphertext.

Each client gets its own sorted map (the server-side analog of a balanced
search tree keyed by virtual address).  The store owns private copies of
every ciphertext page in dump-visible RAM; removal wipes before release so
stale ciphertext never lingers in a memory dump.
"""

from __future__ import annotations

from dataclasses import dataclass

from sortedcontainers import SortedDict

from .errors import ContractViolation
from .ram import PAGE_SIZE, TAG_STORE_CIPHERTEXT, TaggedRam


@dataclass(frozen=True, order=True)
class ClientId:
    """Unique client identity: process id plus a registration epoch.

    Epochs disambiguate pid reuse: re-registering a pid yields a fresh
    (pid, epoch) pair, so ciphertext of a dead client can never be confused
    with its successor's.
    """

    pid: int
    epoch: int

    def __post_init__(self):
        if not 0 <= self.pid < 2**32:
            raise ContractViolation(f"pid {self.pid} not a u32")
        if not 0 <= self.epoch < 2**32:
            raise ContractViolation(f"epoch {self.epoch} not a u32")

    def __str__(self) -> str:
        return f"{self.pid}:{self.epoch}"


class EncryptedPageStore:
    """vaddr -> ciphertext page, one sorted sub-map per client."""

    def __init__(self, ram: TaggedRam):
        self._ram = ram
        self._clients: dict[ClientId, SortedDict] = {}

    def _submap(self, client: ClientId) -> SortedDict:
        sub = self._clients.get(client)
        if sub is None:
            sub = self._clients[client] = SortedDict()
        return sub

    def insert(self, client: ClientId, vaddr: int, cipher) -> None:
        """Store a private copy of a ciphertext page.  Double insert is a bug."""
        if vaddr % PAGE_SIZE:
            raise ContractViolation(f"vaddr {vaddr:#x} not page-aligned")
        if len(cipher) != PAGE_SIZE:
            raise ContractViolation(f"page must be {PAGE_SIZE} bytes")
        sub = self._submap(client)
        if vaddr in sub:
            raise ContractViolation(f"duplicate store insert for {client} {vaddr:#x}")
        buf = self._ram.alloc(TAG_STORE_CIPHERTEXT, PAGE_SIZE, owner=client)
        buf.data[:] = cipher
        sub[vaddr] = buf

    def lookup(self, client: ClientId, vaddr: int):
        """Ciphertext bytes if present, else None (a first touch)."""
        sub = self._clients.get(client)
        if sub is None:
            return None
        buf = sub.get(vaddr)
        return None if buf is None else bytes(buf.data)

    def remove(self, client: ClientId, vaddr: int) -> None:
        """Delete an entry; the released buffer is wiped before reuse."""
        sub = self._clients.get(client)
        if sub is None or vaddr not in sub:
            raise ContractViolation(f"no store entry for {client} {vaddr:#x}")
        self._ram.free(sub.pop(vaddr))

    def contains(self, client: ClientId, vaddr: int) -> bool:
        sub = self._clients.get(client)
        return sub is not None and vaddr in sub

    def drop_client(self, client: ClientId) -> None:
        """Remove and wipe every entry of a client.  Unknown client: no-op."""
        sub = self._clients.pop(client, None)
        if sub is None:
            return
        for buf in sub.values():
            self._ram.free(buf)
        sub.clear()

    def pages(self, client: ClientId):
        """(vaddr, ciphertext) in strictly increasing vaddr order."""
        sub = self._clients.get(client)
        if sub is None:
            return
        for vaddr, buf in sub.items():
            yield vaddr, bytes(buf.data)

    def page_count(self, client: ClientId) -> int:
        sub = self._clients.get(client)
        return 0 if sub is None else len(sub)
