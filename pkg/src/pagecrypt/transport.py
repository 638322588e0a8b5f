"""Control-message codec and the zeroizing shared transfer page.

Control messages are fixed 21-byte records and never carry page contents;
anything that crosses the control channel is also retained in a
dump-visible spool buffer, modeling a kernel socket buffer that is never
erased.  Page contents move exclusively through a single shared
:class:`TransferBuffer` page that is wiped by the receiving side the moment
the transfer completes.
"""

from __future__ import annotations

import struct
from enum import IntEnum
from typing import NamedTuple

from .errors import ProtocolError
from .ram import PAGE_SIZE, TAG_CHANNEL_INTERNAL, TAG_TRANSFER_BUFFER, TaggedRam
from .store import ClientId

MSG_SIZE = 21
_WIRE = struct.Struct("<BIIQI")  # type, pid, epoch, vaddr, len


class MsgType(IntEnum):
    REGISTER = 1
    REGISTER_ACK = 2
    REGION_ADD = 3
    REGION_REMOVE = 4
    FAULT = 5
    RESOLVE = 6
    EVICT_REQ = 7
    EVICT_DONE = 8
    BYE = 9


_TYPE_BY_TAG = {int(t): t for t in MsgType}


class ControlMsg(NamedTuple):
    type: MsgType
    pid: int = 0
    epoch: int = 0
    vaddr: int = 0
    len: int = 0

    @classmethod
    def for_client(cls, type: MsgType, client: ClientId, vaddr: int = 0, len: int = 0):
        return cls(type, client.pid, client.epoch, vaddr, len)


def encode_msg(m: ControlMsg) -> bytes:
    return _WIRE.pack(m.type, m.pid, m.epoch, m.vaddr, m.len)


def decode_msg(raw: bytes) -> ControlMsg:
    if len(raw) != MSG_SIZE:
        raise ProtocolError(f"control message must be {MSG_SIZE} bytes, got {len(raw)}")
    t, pid, epoch, vaddr, length = _WIRE.unpack(raw)
    mtype = _TYPE_BY_TAG.get(t)
    if mtype is None:
        raise ProtocolError(f"unknown message type tag {t}")
    return ControlMsg(mtype, pid, epoch, vaddr, length)


class ControlChannel:
    """In-process control link between one client and the server.

    Every message is round-tripped through the wire encoding, and the raw
    bytes are appended to a rolling dump-visible spool (the socket's kernel
    buffer), so 'no sensitive data on the socket' is a checkable property of
    snapshots rather than a convention.
    """

    SPOOL_SIZE = PAGE_SIZE

    def __init__(self, ram: TaggedRam):
        self._spool = ram.alloc(TAG_CHANNEL_INTERNAL, self.SPOOL_SIZE)
        self._pos = 0
        self._ram = ram
        self.closed = False

    def transmit(self, m: ControlMsg) -> ControlMsg:
        """Encode, retain on the spool, and hand the decoded copy to the peer."""
        if self.closed:
            raise ProtocolError("channel closed")
        raw = encode_msg(m)
        spool = self._spool.data
        pos = self._pos
        end = pos + MSG_SIZE
        if end <= self.SPOOL_SIZE:
            spool[pos:end] = raw
            self._pos = end % self.SPOOL_SIZE
        else:
            cut = self.SPOOL_SIZE - pos
            spool[pos:] = raw[:cut]
            spool[: end - self.SPOOL_SIZE] = raw[cut:]
            self._pos = end - self.SPOOL_SIZE
        return decode_msg(raw)

    def close(self) -> None:
        # the kernel-side spool is deliberately NOT wiped: local sockets do
        # not erase their buffers, which is why pages never travel this way
        self.closed = True


class TransferBuffer:
    """Single shared page for moving plaintext between client and server.

    State machine: idle (all zero) -> in transfer (holds one page) -> idle.
    The reader wipes the page as part of :meth:`read`, so in every snapshot
    not taken mid-transfer the buffer is all zero.
    """

    def __init__(self, ram: TaggedRam, owner: ClientId | None = None):
        self._buf = ram.alloc(TAG_TRANSFER_BUFFER, PAGE_SIZE, owner=owner)
        self._ram = ram
        self._active = False
        self.buffer_id = self._buf.buf_id

    def write(self, page) -> None:
        """transfer_out: place one page in the buffer.  Overlap is a bug."""
        if self._active:
            raise ProtocolError("overlapping transfer: buffer already in use")
        if self._buf.data != _ZERO_PAGE:
            raise ProtocolError("transfer buffer hygiene violated: not zero when idle")
        if len(page) != PAGE_SIZE:
            raise ProtocolError(f"transfer must be exactly {PAGE_SIZE} bytes")
        self._buf.data[:] = page
        self._active = True

    def read(self) -> bytes:
        """transfer_in: take the page out and wipe the buffer."""
        if not self._active:
            raise ProtocolError("no transfer in progress")
        page = bytes(self._buf.data)
        self._buf.wipe()
        self._active = False
        return page

    @property
    def in_transfer(self) -> bool:
        return self._active

    def is_zero(self) -> bool:
        return self._buf.data == _ZERO_PAGE

    def close(self) -> None:
        self._ram.free(self._buf)


_ZERO_PAGE = bytes(PAGE_SIZE)
