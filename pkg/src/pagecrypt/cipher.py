"""Page-granular ChaCha20 stream cipher.

A 4096-byte page is encrypted by XOR with 64 keystream blocks of 64 bytes.
Each block's 512-bit state is the usual four constant words, the eight
256-bit key words, and a 128-bit per-block seed packed little-endian as

    vaddr (8 bytes) | pid (4 bytes) | block_index (4 bytes)

occupying the state words that normally hold counter and nonce.  With an
all-zero seed this degenerates to the textbook zero-counter/zero-nonce
configuration, so the layout is pinned by the public test vectors.

Encryption and decryption are the same XOR, so everything here is an
involution.  Key material is only ever staged in per-call working buffers
which are wiped before return.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

try:
    from . import _chacha_numba
except ImportError:  # pragma: no cover - exercised only without numba
    _chacha_numba = None

PAGE_SIZE = 4096
BLOCK_SIZE = 64
BLOCKS_PER_PAGE = PAGE_SIZE // BLOCK_SIZE  # 64
LANE_UNIT_BLOCKS = 2                       # one lane crypts two blocks
LANE_UNITS = BLOCKS_PER_PAGE // LANE_UNIT_BLOCKS  # 32 units of 128 bytes

KEY_SIZE = 32

_SEED_STRUCT = struct.Struct("<QII")
_ALL_BLOCKS = np.arange(BLOCKS_PER_PAGE, dtype=np.int64)


class MasterKey:
    """256-bit cipher key with explicit zeroization.

    After :meth:`destroy` the backing storage reads as 32 zero bytes.
    """

    __slots__ = ("_buf", "_destroyed")

    def __init__(self, key: bytes | bytearray | memoryview):
        if len(key) != KEY_SIZE:
            raise ContractViolation(f"master key must be {KEY_SIZE} bytes, got {len(key)}")
        self._buf = bytearray(key)
        self._destroyed = False

    @classmethod
    def generate(cls) -> "MasterKey":
        """Fresh key from the OS cryptographically secure generator."""
        return cls(os.urandom(KEY_SIZE))

    def view(self) -> memoryview:
        return memoryview(self._buf)

    @property
    def destroyed(self) -> bool:
        return self._destroyed

    def destroy(self) -> None:
        self._buf[:] = bytes(KEY_SIZE)
        self._destroyed = True

    def __len__(self) -> int:
        return KEY_SIZE


@dataclass(frozen=True)
class BlockSeed:
    """The 128-bit per-block seed: page address, client pid, block index."""

    vaddr: int
    pid: int
    block_index: int

    def __post_init__(self):
        _check_vaddr(self.vaddr)
        _check_pid(self.pid)
        if not 0 <= self.block_index < BLOCKS_PER_PAGE:
            raise ContractViolation(
                f"block_index {self.block_index} outside 0..{BLOCKS_PER_PAGE - 1}"
            )

    def to_bytes(self) -> bytes:
        """16-byte little-endian serialization."""
        return _SEED_STRUCT.pack(self.vaddr, self.pid, self.block_index)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "BlockSeed":
        if len(raw) != 16:
            raise ContractViolation(f"seed must be 16 bytes, got {len(raw)}")
        vaddr, pid, idx = _SEED_STRUCT.unpack(raw)
        return cls(vaddr, pid, idx)


def _check_vaddr(vaddr: int) -> None:
    if not 0 <= vaddr < 2**64:
        raise ContractViolation(f"vaddr {vaddr:#x} not a u64")
    if vaddr % PAGE_SIZE:
        raise ContractViolation(f"vaddr {vaddr:#x} not page-aligned")


def _check_pid(pid: int) -> None:
    if not 0 <= pid < 2**32:
        raise ContractViolation(f"pid {pid} not a u32")


def _key_words(key) -> np.ndarray:
    if isinstance(key, MasterKey):
        key = key.view()
    if len(key) != KEY_SIZE:
        raise ContractViolation(f"key must be {KEY_SIZE} bytes, got {len(key)}")
    return np.frombuffer(key, dtype="<u4")


# ---------------------------------------------------------------------------
# keystream cores

def _keystream_numpy(kw: np.ndarray, vaddr: int, pid: int, indices: np.ndarray) -> np.ndarray:
    """Vectorized fallback: all requested blocks as columns of one state."""
    n = len(indices)
    init = np.empty((16, n), dtype=np.uint32)
    init[0:4] = np.array(
        [0x61707865, 0x3320646E, 0x79622D32, 0x6B206574], dtype=np.uint32
    )[:, None]
    init[4:12] = kw[:, None]
    init[12] = vaddr & 0xFFFFFFFF
    init[13] = (vaddr >> 32) & 0xFFFFFFFF
    init[14] = pid
    init[15] = indices
    x = init.copy()

    def qr(a, b, c, d):
        x[a] += x[b]
        x[d] ^= x[a]
        x[d] = (x[d] << np.uint32(16)) | (x[d] >> np.uint32(16))
        x[c] += x[d]
        x[b] ^= x[c]
        x[b] = (x[b] << np.uint32(12)) | (x[b] >> np.uint32(20))
        x[a] += x[b]
        x[d] ^= x[a]
        x[d] = (x[d] << np.uint32(8)) | (x[d] >> np.uint32(24))
        x[c] += x[d]
        x[b] ^= x[c]
        x[b] = (x[b] << np.uint32(7)) | (x[b] >> np.uint32(25))

    for _ in range(10):
        qr(0, 4, 8, 12)
        qr(1, 5, 9, 13)
        qr(2, 6, 10, 14)
        qr(3, 7, 11, 15)
        qr(0, 5, 10, 15)
        qr(1, 6, 11, 12)
        qr(2, 7, 8, 13)
        qr(3, 4, 9, 14)

    x += init
    words = np.ascontiguousarray(x.T).reshape(-1)
    # working state holds key-derived words; wipe before returning
    init.fill(0)
    x.fill(0)
    return words


def _keystream_words(key, vaddr: int, pid: int, indices: np.ndarray) -> np.ndarray:
    kw = _key_words(key)
    if _chacha_numba is not None:
        out = np.empty(16 * len(indices), dtype=np.uint32)
        _chacha_numba.keystream_words(kw, np.uint64(vaddr), np.uint32(pid), indices, out)
        return out
    return _keystream_numpy(kw, vaddr, pid, indices)


# ---------------------------------------------------------------------------
# public operations

def chacha20_block(key, seed: BlockSeed) -> bytes:
    """One 64-byte keystream block.  Pure function of (key, seed)."""
    idx = np.array([seed.block_index], dtype=np.int64)
    words = _keystream_words(key, seed.vaddr, seed.pid, idx)
    out = words.astype("<u4", copy=False).tobytes()
    words.fill(0)
    return out


def page_keystream(key, vaddr: int, pid: int) -> bytes:
    """The 4096-byte keystream for one page: blocks 0..63 concatenated."""
    _check_vaddr(vaddr)
    _check_pid(pid)
    words = _keystream_words(key, vaddr, pid, _ALL_BLOCKS)
    return words.astype("<u4", copy=False).tobytes()


def crypt_page(key, vaddr: int, pid: int, page) -> bytes:
    """XOR a page with its keystream.  Involutive: crypt(crypt(p)) == p."""
    if len(page) != PAGE_SIZE:
        raise ContractViolation(f"page must be {PAGE_SIZE} bytes, got {len(page)}")
    _check_vaddr(vaddr)
    _check_pid(pid)
    words = _keystream_words(key, vaddr, pid, _ALL_BLOCKS)
    data = np.frombuffer(page, dtype=np.uint32)
    if data.dtype.byteorder not in ("=", "|") or not np.little_endian:
        data = np.frombuffer(page, dtype="<u4")  # pragma: no cover - BE hosts
    out = (data ^ words).astype("<u4", copy=False).tobytes()
    words.fill(0)
    return out


def parallel_crypt_page(key, vaddr: int, pid: int, page, lanes: int) -> bytes:
    """crypt_page with the work split into 128-byte lane units.

    Unit u (blocks 2u and 2u+1) goes to lane u % lanes, mirroring one warp
    lane handling two keystream blocks.  Output is bit-identical to
    :func:`crypt_page` for every lane count.
    """
    if lanes < 1:
        raise ContractViolation(f"lanes must be >= 1, got {lanes}")
    if len(page) != PAGE_SIZE:
        raise ContractViolation(f"page must be {PAGE_SIZE} bytes, got {len(page)}")
    _check_vaddr(vaddr)
    _check_pid(pid)
    out = bytearray(page)
    unit_bytes = LANE_UNIT_BLOCKS * BLOCK_SIZE
    for lane in range(min(lanes, LANE_UNITS)):
        units = range(lane, LANE_UNITS, lanes)
        indices = np.array(
            [b for u in units for b in (2 * u, 2 * u + 1)], dtype=np.int64
        )
        if not len(indices):
            continue
        words = _keystream_words(key, vaddr, pid, indices)
        ks = words.astype("<u4", copy=False).tobytes()
        for k, u in enumerate(units):
            off = u * unit_bytes
            chunk = np.frombuffer(out, dtype=np.uint8, count=unit_bytes, offset=off)
            chunk ^= np.frombuffer(ks, dtype=np.uint8, count=unit_bytes, offset=k * unit_bytes)
        words.fill(0)
    return bytes(out)
