"""Simulated physical memory with per-buffer dump tags.

Every byte the framework treats as RAM lives in a buffer allocated from a
:class:`TaggedRam` registry.  A cold-boot dump (see :mod:`pagecrypt.analyzer`)
is a deep copy of every *tagged* buffer.  Buffers allocated as *private*
model storage outside RAM (the crypto workers' register-resident key slots):
they are excluded from dumps but still accounted, so the analyzer can verify
that the only undumped bytes are the fixed-size key slots.

The registry keeps a strong reference to every live buffer.  Dropping a
buffer without calling :meth:`TaggedRam.free` therefore leaves its contents
visible in every later snapshot, which is exactly how a forgotten wipe
should fail.
"""

from __future__ import annotations

import itertools

from .errors import ContractViolation

PAGE_SIZE = 4096
_ZERO_PAGE = bytes(PAGE_SIZE)

TAG_CLIENT_RESIDENT = "client_resident"
TAG_STORE_CIPHERTEXT = "store_ciphertext"
TAG_TRANSFER_BUFFER = "transfer_buffer"
TAG_CHANNEL_INTERNAL = "channel_internal"
TAG_SERVER_MISC = "server_misc"

TAGS = (
    TAG_CLIENT_RESIDENT,
    TAG_STORE_CIPHERTEXT,
    TAG_TRANSFER_BUFFER,
    TAG_CHANNEL_INTERNAL,
    TAG_SERVER_MISC,
)

# Wire ids for snapshot serialization; 0 is reserved as invalid.
TAG_IDS = {tag: i + 1 for i, tag in enumerate(TAGS)}
TAG_FOR_ID = {i: tag for tag, i in TAG_IDS.items()}


class RamBuf:
    """One contiguous run of simulated RAM (or one private key slot)."""

    __slots__ = ("data", "tag", "owner", "buf_id", "live")

    def __init__(self, data: bytearray, tag: str | None, owner, buf_id: int):
        self.data = data
        self.tag = tag          # None => private (excluded from dumps)
        self.owner = owner      # ClientId or None, attribution metadata only
        self.buf_id = buf_id
        self.live = True

    def wipe(self) -> None:
        """Overwrite the buffer with zeros in place."""
        n = len(self.data)
        self.data[:] = _ZERO_PAGE if n == PAGE_SIZE else bytes(n)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        state = "live" if self.live else "freed"
        return f"<RamBuf #{self.buf_id} {self.tag or 'private'} {len(self.data)}B {state}>"


class TaggedRam:
    """Registry of all simulated RAM buffers.

    Not locked: buffers are owned by a single handler context apiece and
    CPython dict operations are atomic; snapshots are taken stop-the-world.
    """

    def __init__(self):
        self._buffers: dict[int, RamBuf] = {}
        self._ids = itertools.count(1)

    def alloc(self, tag: str, size: int = PAGE_SIZE, owner=None) -> RamBuf:
        """Allocate a zero-filled dump-visible buffer."""
        if tag not in TAG_IDS:
            raise ContractViolation(f"unknown RAM tag {tag!r}")
        buf = RamBuf(bytearray(size), tag, owner, next(self._ids))
        self._buffers[buf.buf_id] = buf
        return buf

    def alloc_private(self, size: int, owner=None) -> RamBuf:
        """Allocate storage outside the dumpable RAM (worker key slots)."""
        buf = RamBuf(bytearray(size), None, owner, next(self._ids))
        self._buffers[buf.buf_id] = buf
        return buf

    def free(self, buf: RamBuf) -> None:
        """Zero-fill and release.  Double free is a contract violation."""
        if not buf.live:
            raise ContractViolation(f"double free of {buf!r}")
        buf.wipe()
        buf.live = False
        del self._buffers[buf.buf_id]

    def buffers(self):
        """Live dump-visible buffers in allocation order."""
        return sorted(
            (b for b in self._buffers.values() if b.tag is not None),
            key=lambda b: b.buf_id,
        )

    def private_buffers(self):
        return sorted(
            (b for b in self._buffers.values() if b.tag is None),
            key=lambda b: b.buf_id,
        )

    def tagged_bytes(self) -> int:
        return sum(len(b) for b in self._buffers.values() if b.tag is not None)

    def private_bytes(self) -> int:
        return sum(len(b) for b in self._buffers.values() if b.tag is None)
