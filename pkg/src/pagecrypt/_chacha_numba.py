"""JIT-compiled ChaCha20 keystream kernel.

Optional import: :mod:`pagecrypt.cipher` falls back to a vectorized numpy
path when numba is unavailable.  All arithmetic runs in uint64 with explicit
32-bit masking because the JIT promotes narrow integer ops to 64 bits.
"""

import numpy as np
from numba import njit

_M = np.uint64(0xFFFFFFFF)
_C0 = np.uint64(0x61707865)
_C1 = np.uint64(0x3320646E)
_C2 = np.uint64(0x79622D32)
_C3 = np.uint64(0x6B206574)
_S16 = np.uint64(16)
_S12 = np.uint64(12)
_S8 = np.uint64(8)
_S7 = np.uint64(7)
_T16 = np.uint64(16)
_T20 = np.uint64(20)
_T24 = np.uint64(24)
_T25 = np.uint64(25)
_H32 = np.uint64(32)


@njit(inline="always")
def _qr(a, b, c, d):
    a = (a + b) & _M
    d ^= a
    d = ((d << _S16) | (d >> _T16)) & _M
    c = (c + d) & _M
    b ^= c
    b = ((b << _S12) | (b >> _T20)) & _M
    a = (a + b) & _M
    d ^= a
    d = ((d << _S8) | (d >> _T24)) & _M
    c = (c + d) & _M
    b ^= c
    b = ((b << _S7) | (b >> _T25)) & _M
    return a, b, c, d


@njit(cache=True)
def keystream_words(kw, vaddr, pid, indices, out):
    """Write the keystream blocks for the given block indices into ``out``.

    kw:      uint32[8] little-endian key words
    out:     uint32[16 * len(indices)], block-major
    """
    k0 = np.uint64(kw[0])
    k1 = np.uint64(kw[1])
    k2 = np.uint64(kw[2])
    k3 = np.uint64(kw[3])
    k4 = np.uint64(kw[4])
    k5 = np.uint64(kw[5])
    k6 = np.uint64(kw[6])
    k7 = np.uint64(kw[7])
    s12 = vaddr & _M
    s13 = (vaddr >> _H32) & _M
    s14 = np.uint64(pid) & _M
    for n in range(indices.shape[0]):
        s15 = np.uint64(indices[n])
        x0, x1, x2, x3 = _C0, _C1, _C2, _C3
        x4, x5, x6, x7 = k0, k1, k2, k3
        x8, x9, x10, x11 = k4, k5, k6, k7
        x12, x13, x14, x15 = s12, s13, s14, s15
        for _ in range(10):
            x0, x4, x8, x12 = _qr(x0, x4, x8, x12)
            x1, x5, x9, x13 = _qr(x1, x5, x9, x13)
            x2, x6, x10, x14 = _qr(x2, x6, x10, x14)
            x3, x7, x11, x15 = _qr(x3, x7, x11, x15)
            x0, x5, x10, x15 = _qr(x0, x5, x10, x15)
            x1, x6, x11, x12 = _qr(x1, x6, x11, x12)
            x2, x7, x8, x13 = _qr(x2, x7, x8, x13)
            x3, x4, x9, x14 = _qr(x3, x4, x9, x14)
        b = n * 16
        out[b + 0] = (x0 + _C0) & _M
        out[b + 1] = (x1 + _C1) & _M
        out[b + 2] = (x2 + _C2) & _M
        out[b + 3] = (x3 + _C3) & _M
        out[b + 4] = (x4 + k0) & _M
        out[b + 5] = (x5 + k1) & _M
        out[b + 6] = (x6 + k2) & _M
        out[b + 7] = (x7 + k3) & _M
        out[b + 8] = (x8 + k4) & _M
        out[b + 9] = (x9 + k5) & _M
        out[b + 10] = (x10 + k6) & _M
        out[b + 11] = (x11 + k7) & _M
        out[b + 12] = (x12 + s12) & _M
        out[b + 13] = (x13 + s13) & _M
        out[b + 14] = (x14 + s14) & _M
        out[b + 15] = (x15 + s15) & _M
