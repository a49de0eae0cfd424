"""Adaptive order-0 byte range coder, bit packing and LEB128 varints.

The coder keeps a 64-bit ``low`` with a one-byte carry cache (the usual
LZMA arrangement) and a 32-bit range renormalised a byte at a time.  The
byte model starts flat, adds ``_INC`` per occurrence and halves its counts
once the total would pass ``_LIMIT``; cumulative counts live in a Fenwick
tree.  Encoder and decoder run the exact same model updates.
"""
from __future__ import annotations

import numba
import numpy as np

from .errors import CorruptStreamError

_TOP = np.uint64(1 << 24)
_MASK32 = np.uint64(0xFFFFFFFF)
_NSYM = 256
_INC = 24
_LIMIT = 1 << 16


@numba.njit(cache=True, inline="always")
def _fen_add(tree, i, delta):
    i += 1
    while i <= _NSYM:
        tree[i] += delta
        i += i & (-i)


@numba.njit(cache=True, inline="always")
def _fen_prefix(tree, i):
    # sum of counts of symbols [0, i)
    s = 0
    while i > 0:
        s += tree[i]
        i -= i & (-i)
    return s


@numba.njit(cache=True)
def _model_reset(freq, tree):
    for k in range(_NSYM):
        freq[k] = 1
    for k in range(_NSYM + 1):
        tree[k] = 0
    for k in range(_NSYM):
        _fen_add(tree, k, 1)
    return _NSYM


@numba.njit(cache=True, inline="always")
def _model_update(freq, tree, sym, total):
    freq[sym] += _INC
    _fen_add(tree, sym, _INC)
    total += _INC
    if total > _LIMIT:
        total = 0
        for k in range(_NSYM + 1):
            tree[k] = 0
        for k in range(_NSYM):
            freq[k] = (freq[k] + 1) >> 1
            total += freq[k]
            _fen_add(tree, k, freq[k])
    return total


@numba.njit(cache=True)
def _rc_encode(data, out):
    """Encode ``data`` (uint8) into ``out``; returns the number of bytes written."""
    freq = np.empty(_NSYM, dtype=np.int64)
    tree = np.empty(_NSYM + 1, dtype=np.int64)
    total = _model_reset(freq, tree)
    low = np.uint64(0)
    rng = np.uint64(0xFFFFFFFF)
    cache = np.uint64(0)
    cache_size = 1
    pos = 0
    first = True
    n = data.shape[0]
    for t in range(n + 5):
        if t < n:
            sym = np.int64(data[t])
            r = rng // np.uint64(total)
            low += r * np.uint64(_fen_prefix(tree, sym))
            rng = r * np.uint64(freq[sym])
            total = _model_update(freq, tree, sym, total)
            if rng >= _TOP:
                continue
        # shift_low: once per renormalisation step, and five times to flush
        while True:
            if (low & _MASK32) < np.uint64(0xFF000000) or (low >> np.uint64(32)) != np.uint64(0):
                carry = low >> np.uint64(32)
                temp = cache
                while True:
                    if first:
                        # leading byte of the stream is always zero; not stored
                        first = False
                    else:
                        out[pos] = np.uint8((temp + carry) & np.uint64(0xFF))
                        pos += 1
                    temp = np.uint64(0xFF)
                    cache_size -= 1
                    if cache_size == 0:
                        break
                cache = (low >> np.uint64(24)) & np.uint64(0xFF)
            cache_size += 1
            low = (low & np.uint64(0x00FFFFFF)) << np.uint64(8)
            if t < n:
                rng = rng << np.uint64(8)
                if rng >= _TOP:
                    break
            else:
                break
    return pos


@numba.njit(cache=True)
def _rc_decode(src, n, out):
    """Decode ``n`` bytes from ``src`` into ``out``; returns 0 or an error code.

    1: stream exhausted early, 2: code outside the current interval.
    """
    freq = np.empty(_NSYM, dtype=np.int64)
    tree = np.empty(_NSYM + 1, dtype=np.int64)
    total = _model_reset(freq, tree)
    m = src.shape[0]
    pos = 0
    code = np.uint64(0)
    rng = np.uint64(0xFFFFFFFF)
    for _ in range(4):
        if pos >= m:
            return 1
        code = (code << np.uint64(8)) | np.uint64(src[pos])
        pos += 1
    for t in range(n):
        r = rng // np.uint64(total)
        v = code // r
        if v >= np.uint64(total):
            return 2
        # Fenwick descent: largest sym with prefix(sym) <= v
        rem = np.int64(v)
        idx = 0
        step = _NSYM
        while step > 0:
            nxt = idx + step
            if nxt <= _NSYM and tree[nxt] <= rem:
                idx = nxt
                rem -= tree[nxt]
            step >>= 1
        sym = idx
        cum = np.int64(v) - rem
        out[t] = np.uint8(sym)
        code -= r * np.uint64(cum)
        rng = r * np.uint64(freq[sym])
        total = _model_update(freq, tree, sym, total)
        while rng < _TOP:
            # the flush leaves at most four trailing bytes unread; missing ones read as zero
            b = np.uint64(0)
            if pos < m:
                b = np.uint64(src[pos])
            elif pos >= m + 4:
                return 1
            pos += 1
            code = ((code << np.uint64(8)) | b) & _MASK32
            rng = rng << np.uint64(8)
    return 0


def encode_bytes(data) -> bytes:
    """Range-code a byte string with a fresh adaptive model."""
    arr = np.frombuffer(bytes(data), dtype=np.uint8) if not isinstance(data, np.ndarray) else data.astype(np.uint8, copy=False)
    # adaptive model can spend up to 16 bits on a rare byte
    out = np.empty(2 * arr.size + 16, dtype=np.uint8)
    k = _rc_encode(np.ascontiguousarray(arr), out)
    return out[:k].tobytes()


def decode_bytes(stream, n: int) -> bytes:
    src = np.frombuffer(bytes(stream), dtype=np.uint8)
    out = np.empty(n, dtype=np.uint8)
    err = _rc_decode(src, n, out)
    if err == 1:
        raise CorruptStreamError("range-coded stream ended early")
    if err == 2:
        raise CorruptStreamError("range-coded stream is inconsistent with its model")
    return out.tobytes()


# bit packing ------------------------------------------------------------------

@numba.njit(cache=True)
def _pack(symbols, bits, out):
    acc = np.uint64(0)
    nacc = 0
    pos = 0
    b = np.uint64(bits)
    for k in range(symbols.shape[0]):
        acc = (acc << b) | np.uint64(symbols[k])
        nacc += bits
        while nacc >= 8:
            nacc -= 8
            out[pos] = np.uint8((acc >> np.uint64(nacc)) & np.uint64(0xFF))
            pos += 1
        acc &= (np.uint64(1) << np.uint64(nacc)) - np.uint64(1)
    if nacc > 0:
        out[pos] = np.uint8((acc << np.uint64(8 - nacc)) & np.uint64(0xFF))
        pos += 1
    return pos


@numba.njit(cache=True)
def _unpack(data, bits, n, out):
    acc = np.uint64(0)
    nacc = 0
    pos = 0
    mask = (np.uint64(1) << np.uint64(bits)) - np.uint64(1)
    for k in range(n):
        while nacc < bits:
            acc = (acc << np.uint64(8)) | np.uint64(data[pos])
            pos += 1
            nacc += 8
        nacc -= bits
        out[k] = np.uint16((acc >> np.uint64(nacc)) & mask)
        acc &= (np.uint64(1) << np.uint64(nacc)) - np.uint64(1)


def packed_size(n: int, bits: int) -> int:
    return (n * bits + 7) // 8


def pack_bits(symbols, bits: int) -> bytes:
    """Pack unsigned symbols MSB-first at a fixed width (1..16)."""
    sym = np.ascontiguousarray(symbols, dtype=np.uint16)
    if sym.size and int(sym.max()) >> bits:
        raise ValueError(f"symbol does not fit in {bits} bits")
    out = np.empty(packed_size(sym.size, bits), dtype=np.uint8)
    _pack(sym, bits, out)
    return out.tobytes()


def unpack_bits(data, bits: int, n: int) -> np.ndarray:
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    if buf.size < packed_size(n, bits):
        raise CorruptStreamError("bit-packed payload is shorter than its symbol count")
    out = np.empty(n, dtype=np.uint16)
    _unpack(buf, bits, n, out)
    return out


# varints ----------------------------------------------------------------------

@numba.njit(cache=True)
def _varint_encode_u64(values, out):
    pos = 0
    for k in range(values.shape[0]):
        v = values[k]
        while v >= np.uint64(0x80):
            out[pos] = np.uint8((v & np.uint64(0x7F)) | np.uint64(0x80))
            v >>= np.uint64(7)
            pos += 1
        out[pos] = np.uint8(v)
        pos += 1
    return pos


@numba.njit(cache=True)
def _varint_decode_u64(data, n, out):
    pos = 0
    m = data.shape[0]
    for k in range(n):
        v = np.uint64(0)
        shift = 0
        while True:
            if pos >= m or shift > 63:
                return -1
            b = np.uint64(data[pos])
            pos += 1
            v |= (b & np.uint64(0x7F)) << np.uint64(shift)
            shift += 7
            if b < np.uint64(0x80):
                break
        out[k] = v
    return pos


def varint_encode(values) -> bytes:
    """LEB128 encoding of unsigned integers (``uint64`` range)."""
    vals = np.ascontiguousarray(values, dtype=np.uint64)
    out = np.empty(vals.size * 10, dtype=np.uint8)
    k = _varint_encode_u64(vals, out)
    return out[:k].tobytes()


def varint_decode(data, n: int) -> np.ndarray:
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    out = np.empty(n, dtype=np.uint64)
    if _varint_decode_u64(buf, n, out) < 0:
        raise CorruptStreamError("truncated or overlong varint")
    return out
