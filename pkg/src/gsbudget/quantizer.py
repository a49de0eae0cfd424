"""Group-wise affine quantization of the attribute matrix and the loss tensor.

A group of values x with bit-width b is mapped to integer symbols by::

    s = (max(x) - min(x)) / 2**b
    z = floor(2**b - max(x) / s)
    symbol = rint(clip(x / s + z, 0, 2**b - 1))

and reconstructed as ``(symbol - z) * s``.  ``z`` is floored rather than
rounded so the clamp at the top symbol never costs more than one step ``s``.
Groups whose values are all equal carry a constant flag and decode to their
minimum exactly.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numba
import numpy as np

from .errors import CorruptStreamError, InvalidInputError, InvalidPartitionError

Q_MAX_DEFAULT = 16
MAX_BITS = 16
# |z| beyond this cannot be represented exactly alongside x / s
_Z_LIMIT = 2.0**53


class Norm(str, enum.Enum):
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"

    @property
    def code(self) -> int:
        return {"l1": 1, "l2": 2, "linf": 3}[self.value]

    @classmethod
    def from_code(cls, code: int) -> "Norm":
        return {1: cls.L1, 2: cls.L2, 3: cls.LINF}[code]


@dataclass(frozen=True)
class GroupPartition:
    """Contiguous near-equal split of ``n_kept`` columns into ``blocks`` runs.

    Every channel uses the same boundaries.
    """

    channels: int
    blocks: int
    boundaries: np.ndarray

    @property
    def n_kept(self) -> int:
        return int(self.boundaries[-1])

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def element_counts(self) -> np.ndarray:
        return np.broadcast_to(self.lengths, (self.channels, self.blocks)).astype(np.int64)

    def block_slice(self, j: int) -> slice:
        return slice(int(self.boundaries[j]), int(self.boundaries[j + 1]))


def make_partition(channels: int, n_kept: int, blocks: int) -> GroupPartition:
    if blocks < 1:
        raise InvalidPartitionError(f"need at least one block, got {blocks}")
    if n_kept < blocks:
        raise InvalidPartitionError(f"cannot split {n_kept} points into {blocks} non-empty blocks")
    if channels < 1:
        raise InvalidPartitionError(f"need at least one channel, got {channels}")
    q, r = divmod(n_kept, blocks)
    lengths = np.full(blocks, q, dtype=np.int64)
    lengths[:r] += 1
    bounds = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    return GroupPartition(channels, blocks, bounds)


@dataclass(frozen=True)
class GroupQuantParams:
    min: float
    scale: float
    zero_point: int
    bits: int
    constant: bool


@dataclass
class QuantizedAttributes:
    """Symbols for a whole C x N attribute matrix plus per-group parameters."""

    symbols: np.ndarray  # (C, N) uint16
    mins: np.ndarray  # (C, B) float64
    scales: np.ndarray
    zero_points: np.ndarray  # (C, B) int64
    bits: np.ndarray  # (C, B) int64
    constant: np.ndarray  # (C, B) bool

    def group_params(self, i: int, j: int) -> GroupQuantParams:
        return GroupQuantParams(
            float(self.mins[i, j]), float(self.scales[i, j]), int(self.zero_points[i, j]),
            int(self.bits[i, j]), bool(self.constant[i, j]),
        )


@dataclass
class LossTensor:
    omega: np.ndarray  # (C, B, Q_max); omega[i, j, b - 1] is the loss at b bits
    norm: Norm

    @property
    def q_max(self) -> int:
        return self.omega.shape[2]


# kernels ----------------------------------------------------------------------

@numba.njit(cache=True, inline="always")
def _group_params(x, lo, hi, bits):
    mn = x[lo]
    mx = x[lo]
    for k in range(lo + 1, hi):
        v = x[k]
        if v < mn:
            mn = v
        if v > mx:
            mx = v
    if mx == mn:
        return mn, mx, 0.0, 0.0, True
    levels = 2.0**bits
    s = (mx - mn) / levels
    z = np.floor(levels - mx / s)
    return mn, mx, s, z, False


@numba.njit(cache=True, inline="always")
def _symbol(v, s, z, top):
    q = v / s + z
    if q < 0.0:
        q = 0.0
    elif q > top:
        q = top
    return np.rint(q)


@numba.njit(cache=True, parallel=True)
def _quantize_all(attrs, bounds, bits, symbols, mins, scales, zeros, const):
    C = attrs.shape[0]
    B = bounds.shape[0] - 1
    bad = 0
    for g in numba.prange(C * B):
        i = g // B
        j = g % B
        lo = bounds[j]
        hi = bounds[j + 1]
        b = bits[i, j]
        mn, mx, s, z, c = _group_params(attrs[i], lo, hi, b)
        mins[i, j] = mn
        const[i, j] = c
        if c:
            scales[i, j] = 0.0
            zeros[i, j] = 0
            for k in range(lo, hi):
                symbols[i, k] = 0
            continue
        if not (abs(z) < _Z_LIMIT and s > 0.0):
            bad += 1
            continue
        scales[i, j] = s
        zeros[i, j] = np.int64(z)
        top = 2.0**b - 1.0
        for k in range(lo, hi):
            symbols[i, k] = np.uint16(_symbol(attrs[i, k], s, z, top))
    return bad


@numba.njit(cache=True, parallel=True)
def _dequantize_all(symbols, bounds, bits, mins, scales, zeros, const, out):
    C = symbols.shape[0]
    B = bounds.shape[0] - 1
    bad = 0
    for g in numba.prange(C * B):
        i = g // B
        j = g % B
        top = (1 << bits[i, j]) - 1
        z = np.float64(zeros[i, j])
        s = scales[i, j]
        for k in range(bounds[j], bounds[j + 1]):
            q = np.int64(symbols[i, k])
            if q > top:
                bad += 1
            if const[i, j]:
                out[i, k] = mins[i, j]
            else:
                out[i, k] = (np.float64(q) - z) * s
    return bad


@numba.njit(cache=True)
def _loss_cell(x, lo, hi, b, norm):
    mn, mx, s, z, c = _group_params(x, lo, hi, b)
    if c:
        return 0.0
    top = 2.0**b - 1.0
    acc = 0.0
    for k in range(lo, hi):
        e = abs((_symbol(x[k], s, z, top) - z) * s - x[k])
        if norm == 1:
            acc += e
        elif norm == 2:
            acc += e * e
        elif e > acc:
            acc = e
    if norm == 2:
        acc = np.sqrt(acc)
    return acc


@numba.njit(cache=True, parallel=True)
def _loss_all(attrs, bounds, q_max, norm, omega):
    C = attrs.shape[0]
    B = bounds.shape[0] - 1
    for cell in numba.prange(C * B * q_max):
        i = cell // (B * q_max)
        r = cell % (B * q_max)
        j = r // q_max
        b = r % q_max + 1
        omega[i, j, b - 1] = _loss_cell(attrs[i], bounds[j], bounds[j + 1], b, norm)


@numba.njit(cache=True)
def _loss_cells(attrs, bounds, cells, norm, out):
    """Evaluate an explicit list of (i, j, b) cells in the given order."""
    for t in range(cells.shape[0]):
        i, j, b = cells[t, 0], cells[t, 1], cells[t, 2]
        out[t] = _loss_cell(attrs[i], bounds[j], bounds[j + 1], b, norm)


# public API -------------------------------------------------------------------

def _check_bits(bits, hi=MAX_BITS):
    b = np.asarray(bits)
    if b.size and (b.min() < 1 or b.max() > hi):
        raise InvalidInputError(f"bit-widths must lie in [1, {hi}]")


def quantize_group(values, bits: int):
    """Quantize one group; returns ``(symbols, GroupQuantParams)``."""
    x = np.ascontiguousarray(values, dtype=np.float64).reshape(1, -1)
    if x.size == 0:
        raise InvalidInputError("cannot quantize an empty group")
    if not np.isfinite(x).all():
        raise InvalidInputError("group values must be finite")
    _check_bits(bits)
    q = quantize_attributes(x, np.array([0, x.shape[1]], dtype=np.int64), np.array([[bits]]))
    return q.symbols[0], q.group_params(0, 0)


def dequantize_group(symbols, params: GroupQuantParams) -> np.ndarray:
    sym = np.asarray(symbols)
    if sym.size and (sym.min() < 0 or sym.max() > (1 << params.bits) - 1):
        raise CorruptStreamError(f"symbol out of range for {params.bits}-bit group")
    if params.constant:
        return np.full(sym.shape, params.min, dtype=np.float64)
    return (sym.astype(np.float64) - float(params.zero_point)) * params.scale


def _bounds_of(partition_or_bounds):
    if isinstance(partition_or_bounds, GroupPartition):
        return partition_or_bounds.boundaries
    return np.asarray(partition_or_bounds, dtype=np.int64)


def quantize_attributes(attributes, partition, bits) -> QuantizedAttributes:
    """Quantize every (channel, block) group of ``attributes`` at ``bits[i, j]``."""
    attrs = np.ascontiguousarray(attributes, dtype=np.float64)
    bounds = np.ascontiguousarray(_bounds_of(partition), dtype=np.int64)
    bits = np.ascontiguousarray(bits, dtype=np.int64)
    C, B = attrs.shape[0], len(bounds) - 1
    if bits.shape != (C, B):
        raise InvalidInputError(f"bit assignment has shape {bits.shape}, expected {(C, B)}")
    if bounds[-1] != attrs.shape[1]:
        raise InvalidInputError("partition does not cover the attribute matrix")
    _check_bits(bits)
    symbols = np.empty(attrs.shape, dtype=np.uint16)
    mins = np.empty((C, B))
    scales = np.empty((C, B))
    zeros = np.empty((C, B), dtype=np.int64)
    const = np.empty((C, B), dtype=np.bool_)
    bad = _quantize_all(attrs, bounds, bits, symbols, mins, scales, zeros, const)
    if bad:
        raise InvalidInputError(
            f"{bad} group(s) have a value range too small relative to their magnitude "
            "for an exact integer zero point"
        )
    return QuantizedAttributes(symbols, mins, scales, zeros, bits, const)


def dequantize_attributes(q: QuantizedAttributes, partition) -> np.ndarray:
    bounds = np.ascontiguousarray(_bounds_of(partition), dtype=np.int64)
    out = np.empty(q.symbols.shape, dtype=np.float64)
    bad = _dequantize_all(
        np.ascontiguousarray(q.symbols), bounds, np.ascontiguousarray(q.bits, dtype=np.int64),
        q.mins, q.scales, np.ascontiguousarray(q.zero_points, dtype=np.int64), q.constant, out,
    )
    if bad:
        raise CorruptStreamError(f"{bad} symbol(s) exceed their group's bit-width")
    return out


def compute_loss_tensor(model_or_attributes, partition: GroupPartition, norm="l2",
                        q_max: int = Q_MAX_DEFAULT) -> LossTensor:
    """Quantization loss of every group at every bit-width 1..q_max.

    Cells are independent, so the result does not depend on evaluation order
    or thread count.
    """
    attrs = getattr(model_or_attributes, "attributes", model_or_attributes)
    attrs = np.ascontiguousarray(attrs, dtype=np.float64)
    norm = Norm(norm)
    if not 1 <= q_max <= MAX_BITS:
        raise InvalidInputError(f"q_max must lie in [1, {MAX_BITS}], got {q_max}")
    if attrs.shape[0] != partition.channels or attrs.shape[1] != partition.n_kept:
        raise InvalidInputError(
            f"partition ({partition.channels} x {partition.n_kept}) does not match attributes {attrs.shape}"
        )
    omega = np.empty((partition.channels, partition.blocks, q_max))
    _loss_all(attrs, partition.boundaries, q_max, norm.code, omega)
    return LossTensor(omega, norm)


def loss_cells(attributes, partition: GroupPartition, cells, norm="l2") -> np.ndarray:
    """Loss for an explicit ``(K, 3)`` array of ``(channel, block, bits)`` cells."""
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    out = np.empty(len(cells))
    _loss_cells(np.ascontiguousarray(attributes, dtype=np.float64), partition.boundaries,
                cells, Norm(norm).code, out)
    return out


def group_norms(err, partition: GroupPartition, norm) -> np.ndarray:
    """Per-group norm of an error matrix (C x N), shape (C, B)."""
    norm = Norm(norm)
    e = np.abs(err)
    starts = partition.boundaries[:-1]
    if norm is Norm.L1:
        return np.add.reduceat(e, starts, axis=1)
    if norm is Norm.L2:
        return np.sqrt(np.add.reduceat(e * e, starts, axis=1))
    return np.maximum.reduceat(e, starts, axis=1)
