"""Bit-exact container format.

Layout (all integers little-endian)::

    header   magic "SGSC" | version u16 | points u64 | C u16 | B u16
             | coord_bits u8 | norm u8 | schema digest 8B | crc32 u32   (32 bytes)
    section  length u64 | body | crc32(body) u32     x4, in this order:
               schema      utf-8 descriptor text
               geometry    origin 3xf64 | step 3xf64 | varint bytes u64 | range-coded varints
               metadata    flags u8 x G | value f64 x G | zigzag varint zero x K
                           | varint stream length x K
               attributes  concatenated per-group streams

Geometry is the Morton-code delta sequence as LEB128 varints, range coded
with one adaptive byte model.  Each attribute group is bit-packed at its
width and range coded with a fresh model; a group whose coded stream would
not be smaller than the packed bytes is stored packed.  Group flags hold the
bit-width in the low 5 bits, bit 6 for stored-packed and bit 7 for constant.
Metadata is stored as planes over the G = C x B groups in channel-major order;
``value`` is the group's constant for constant groups and its scale otherwise,
and the K non-constant groups also carry a zero-point and a stream length.
"""
from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import CorruptContainerError, CorruptStreamError, InvalidInputError
from .model import (GaussianModel, dequantize_coordinates, morton_codes, parse_schema,
                    schema_digest)
from .quantizer import GroupPartition, Norm, QuantizedAttributes, dequantize_attributes, make_partition
from .rangecoder import (_pack, _rc_decode, _rc_encode, _unpack, _varint_decode_u64, decode_bytes,
                         encode_bytes, varint_decode, varint_encode)

MAGIC = b"SGSC"
VERSION = 1
MAX_COORD_BITS = 21

_HEADER = struct.Struct("<4sHQHHBB8s")
HEADER_SIZE = _HEADER.size + 4
SECTION_OVERHEAD = 12
SECTIONS = ("schema", "geometry", "metadata", "attributes")

META_DTYPE = np.dtype([("min", "<f8"), ("scale", "<f8"), ("zero", "<i8"), ("flags", "u1"), ("length", "<u4")])
FLAG_CONSTANT = 0x80
FLAG_STORED = 0x40
_BITS_MASK = 0x1F

_GEOM_FIXED = struct.Struct("<6dQ")


@dataclass
class ContainerHeader:
    point_count: int
    channels: int
    blocks: int
    coord_bits: int = 16
    norm: Norm = Norm.L2
    schema_digest: bytes = b"\0" * 8
    version: int = VERSION

    def pack(self) -> bytes:
        body = _HEADER.pack(MAGIC, self.version, self.point_count, self.channels, self.blocks,
                            self.coord_bits, Norm(self.norm).code, self.schema_digest)
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def unpack(cls, buf: bytes) -> "ContainerHeader":
        if len(buf) < HEADER_SIZE:
            raise CorruptContainerError("file shorter than the fixed header", "header")
        body = buf[:_HEADER.size]
        magic, version, n, c, b, cbits, norm, digest = _HEADER.unpack(body)
        if magic != MAGIC:
            raise CorruptContainerError(f"bad magic {magic!r}", "header")
        if version != VERSION:
            raise CorruptContainerError(f"unsupported version {version}", "header")
        (crc,) = struct.unpack_from("<I", buf, _HEADER.size)
        if crc != zlib.crc32(body):
            raise CorruptContainerError("checksum mismatch", "header")
        if n < 1 or c < 1 or b < 1 or b > n:
            raise CorruptContainerError(f"invalid counts points={n} C={c} B={b}", "header")
        if not 1 <= cbits <= MAX_COORD_BITS:
            raise CorruptContainerError(f"invalid coordinate bit-width {cbits}", "header")
        try:
            norm = Norm.from_code(norm)
        except KeyError:
            raise CorruptContainerError(f"unknown norm id {norm}", "header") from None
        return cls(n, c, b, cbits, norm, digest, version)


@dataclass
class Diagnostics:
    header: ContainerHeader
    section_sizes: dict  # framed size of each section, prefix and checksum included
    group_symbols: np.ndarray  # (C, B) symbol count per group
    group_bytes: np.ndarray  # (C, B) coded stream length per group
    stored_packed: np.ndarray  # (C, B) bool
    constant: np.ndarray  # (C, B) bool
    scales: np.ndarray
    file_size: int = 0
    extra: dict = field(default_factory=dict)


# geometry -----------------------------------------------------------------------

def encode_geometry(grid, origin, step) -> bytes:
    """Serialize a Morton-sorted coordinate grid; raises if codes decrease."""
    codes = morton_codes(grid)
    if codes.dtype != np.uint64:
        raise InvalidInputError(f"geometry codec supports at most {MAX_COORD_BITS} bits per axis")
    if len(codes) > 1 and (codes[1:] < codes[:-1]).any():
        raise InvalidInputError("grid is not sorted by Morton code")
    deltas = np.diff(codes, prepend=np.uint64(0))
    raw = varint_encode(deltas)
    head = _GEOM_FIXED.pack(*np.asarray(origin, dtype=np.float64), *np.asarray(step, dtype=np.float64), len(raw))
    return head + encode_bytes(raw)


@numba.njit(cache=True)
def _deinterleave(codes, out):
    for i in range(codes.shape[0]):
        c = codes[i]
        x = np.uint64(0)
        y = np.uint64(0)
        z = np.uint64(0)
        for k in range(21):
            sh = np.uint64(3 * k)
            x |= ((c >> sh) & np.uint64(1)) << np.uint64(k)
            y |= ((c >> (sh + np.uint64(1))) & np.uint64(1)) << np.uint64(k)
            z |= ((c >> (sh + np.uint64(2))) & np.uint64(1)) << np.uint64(k)
        out[i, 0] = x
        out[i, 1] = y
        out[i, 2] = z


def decode_geometry(body: bytes, n: int, coord_bits: int):
    if len(body) < _GEOM_FIXED.size:
        raise CorruptStreamError("geometry section shorter than its fixed fields")
    vals = _GEOM_FIXED.unpack_from(body)
    origin, step, nraw = np.array(vals[:3]), np.array(vals[3:6]), vals[6]
    if nraw > 10 * n or nraw < n:
        raise CorruptStreamError(f"implausible varint length {nraw} for {n} points")
    raw = decode_bytes(body[_GEOM_FIXED.size:], nraw)
    deltas = varint_decode(raw, n)
    if len(varint_encode(deltas)) != nraw:
        raise CorruptStreamError("varint stream length mismatch")
    with np.errstate(over="ignore"):
        codes = np.cumsum(deltas, dtype=np.uint64)
    if n > 1 and (codes[1:] < codes[:-1]).any():
        raise CorruptStreamError("Morton codes overflow")
    if int(codes[-1]) >> (3 * coord_bits):
        raise CorruptStreamError("Morton code exceeds the declared coordinate bit-width")
    grid = np.empty((n, 3), dtype=np.uint64)
    _deinterleave(codes, grid)
    return grid, origin, step


# attributes ---------------------------------------------------------------------

@numba.njit(cache=True)
def _encode_groups(symbols, bounds, bits, const, out, lengths, flags):
    C = symbols.shape[0]
    B = bounds.shape[0] - 1
    scratch = np.empty(2 * (bounds[1] - bounds[0]) + 8, dtype=np.uint8)
    pos = 0
    for g in range(C * B):
        i = g // B
        j = g % B
        b = bits[i, j]
        flags[g] = np.uint8(b)
        if const[i, j]:
            flags[g] |= np.uint8(FLAG_CONSTANT)
            lengths[g] = 0
            continue
        n = bounds[j + 1] - bounds[j]
        nb = (n * b + 7) // 8
        packed = scratch[:nb]
        _pack(symbols[i, bounds[j]:bounds[j + 1]], b, packed)
        k = _rc_encode(packed, out[pos:])
        if k >= nb:
            out[pos:pos + nb] = packed
            k = nb
            flags[g] |= np.uint8(FLAG_STORED)
        lengths[g] = k
        pos += k
    return pos


@numba.njit(cache=True)
def _decode_groups(stream, bounds, flags, lengths, symbols, scratch):
    """Returns -1 on success, else the index of the first bad group."""
    C = symbols.shape[0]
    B = bounds.shape[0] - 1
    pos = 0
    for g in range(C * B):
        i = g // B
        j = g % B
        f = flags[g]
        n = bounds[j + 1] - bounds[j]
        if f & FLAG_CONSTANT:
            for k in range(bounds[j], bounds[j + 1]):
                symbols[i, k] = 0
            continue
        b = np.int64(f & _BITS_MASK)
        nb = (n * b + 7) // 8
        L = np.int64(lengths[g])
        if pos + L > stream.shape[0]:
            return g
        chunk = stream[pos:pos + L]
        if f & FLAG_STORED:
            if L != nb:
                return g
            _unpack(chunk, b, n, symbols[i, bounds[j]:bounds[j + 1]])
        else:
            if _rc_decode(chunk, nb, scratch[:nb]) != 0:
                return g
            _unpack(scratch[:nb], b, n, symbols[i, bounds[j]:bounds[j + 1]])
        pos += L
    if pos != stream.shape[0]:
        return C * B
    return -1


def encode_attributes(q: QuantizedAttributes, partition: GroupPartition):
    """Per-group streams in (channel, block) order; returns ``(stream, metadata)``."""
    bits = np.ascontiguousarray(q.bits, dtype=np.int64)
    sym = np.ascontiguousarray(q.symbols, dtype=np.uint16)
    if sym.size:
        limits = np.repeat((1 << bits) - 1, partition.lengths, axis=1)
        if (sym > limits).any():
            raise InvalidInputError("symbol exceeds its group's bit-width")
    G = partition.channels * partition.blocks
    nbytes = (partition.lengths[None, :] * bits + 7) // 8
    out = np.empty(int(2 * nbytes.sum()) + 16 * G, dtype=np.uint8)
    lengths = np.empty(G, dtype=np.uint32)
    flags = np.empty(G, dtype=np.uint8)
    k = _encode_groups(sym, partition.boundaries, bits, np.ascontiguousarray(q.constant), out, lengths, flags)
    meta = np.empty(G, dtype=META_DTYPE)
    meta["min"] = q.mins.ravel()
    meta["scale"] = q.scales.ravel()
    meta["zero"] = q.zero_points.ravel()
    meta["flags"] = flags
    meta["length"] = lengths
    return out[:k].tobytes(), meta


def decode_attributes(stream: bytes, meta: np.ndarray, partition: GroupPartition) -> QuantizedAttributes:
    C, B = partition.channels, partition.blocks
    flags = meta["flags"]
    bits = (flags & _BITS_MASK).astype(np.int64)
    const = (flags & FLAG_CONSTANT) != 0
    if ((bits < 1) | (bits > 16)).any():
        raise CorruptContainerError("group bit-width outside [1, 16]", "metadata")
    if (meta["scale"][const] != 0).any() or (meta["scale"][~const] <= 0).any() or not np.isfinite(meta["scale"]).all():
        raise CorruptContainerError("group scale inconsistent with its constant flag", "metadata")
    if not np.isfinite(meta["min"]).all():
        raise CorruptContainerError("non-finite group minimum", "metadata")
    if (const & (meta["length"] != 0)).any():
        raise CorruptContainerError("constant group carries payload", "metadata")
    symbols = np.empty((C, partition.n_kept), dtype=np.uint16)
    scratch = np.empty(2 * int(partition.lengths.max()) + 8, dtype=np.uint8)
    bad = _decode_groups(np.frombuffer(stream, dtype=np.uint8), partition.boundaries,
                         np.ascontiguousarray(flags), np.ascontiguousarray(meta["length"]), symbols, scratch)
    if bad >= 0:
        where = "trailing bytes" if bad == C * B else f"group ({bad // B}, {bad % B})"
        raise CorruptStreamError(f"attribute stream damaged at {where}")
    return QuantizedAttributes(
        symbols,
        meta["min"].reshape(C, B).copy(),
        meta["scale"].reshape(C, B).copy(),
        meta["zero"].reshape(C, B).astype(np.int64),
        bits.reshape(C, B),
        const.reshape(C, B),
    )


def pack_metadata(meta: np.ndarray) -> bytes:
    meta = np.ascontiguousarray(meta, dtype=META_DTYPE)
    const = (meta["flags"] & FLAG_CONSTANT) != 0
    value = np.where(const, meta["min"], meta["scale"]).astype("<f8")
    z = meta["zero"][~const].astype(np.int64)
    zz = ((z << 1) ^ (z >> 63)).view(np.uint64)
    return (meta["flags"].tobytes() + value.tobytes() + varint_encode(zz)
            + varint_encode(meta["length"][~const].astype(np.uint64)))


def unpack_metadata(body: bytes, n_groups: int) -> np.ndarray:
    """Inverse of :func:`pack_metadata`; non-constant groups get ``min = -zero * scale``."""
    buf = np.frombuffer(body, dtype=np.uint8)
    if len(buf) < 9 * n_groups:
        raise CorruptContainerError("metadata shorter than its fixed planes", "metadata")
    flags = buf[:n_groups].copy()
    value = np.frombuffer(body, dtype="<f8", count=n_groups, offset=n_groups).astype(np.float64)
    const = (flags & FLAG_CONSTANT) != 0
    k = int((~const).sum())
    rest = buf[9 * n_groups:]
    zz = np.empty(k, dtype=np.uint64)
    used = _varint_decode_u64(rest, k, zz)
    lengths = np.empty(k, dtype=np.uint64)
    used2 = _varint_decode_u64(rest[used:], k, lengths) if used >= 0 else -1
    if used < 0 or used2 < 0:
        raise CorruptContainerError("truncated varint in metadata", "metadata")
    if used + used2 != len(rest):
        raise CorruptContainerError("trailing bytes in metadata", "metadata")
    if (lengths >> np.uint64(32)).any():
        raise CorruptContainerError("group stream length out of range", "metadata")
    z = (zz >> np.uint64(1)).view(np.int64) ^ -(zz & np.uint64(1)).view(np.int64)
    meta = np.zeros(n_groups, dtype=META_DTYPE)
    meta["flags"] = flags
    meta["scale"][~const] = value[~const]
    meta["zero"][~const] = z
    meta["length"][~const] = lengths
    with np.errstate(over="ignore", invalid="ignore"):
        meta["min"] = np.where(const, value, -meta["zero"].astype(np.float64) * meta["scale"])
    return meta


# container ----------------------------------------------------------------------

def frame(body: bytes) -> bytes:
    return struct.pack("<Q", len(body)) + body + struct.pack("<I", zlib.crc32(body))


def serialize_container(header: ContainerHeader, schema_text: str, geometry: bytes,
                        metadata: np.ndarray, attributes: bytes) -> bytes:
    meta = np.ascontiguousarray(metadata, dtype=META_DTYPE)
    if len(meta) != header.channels * header.blocks:
        raise InvalidInputError(f"{len(meta)} metadata records for {header.channels} x {header.blocks} groups")
    if int(meta["length"].sum()) != len(attributes):
        raise InvalidInputError("group stream lengths do not add up to the attribute section")
    parts = [header.pack(), frame(schema_text.encode("utf-8")), frame(geometry),
             frame(pack_metadata(meta)), frame(attributes)]
    return b"".join(parts)


def write_container(header, schema_text, geometry, metadata, attributes, path) -> int:
    """Write a container file and return its size in bytes."""
    blob = serialize_container(header, schema_text, geometry, metadata, attributes)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def _read_bytes(src) -> bytes:
    if isinstance(src, (bytes, bytearray, memoryview)):
        return bytes(src)
    with open(src, "rb") as fh:
        return fh.read()


def split_sections(buf: bytes):
    """Validate framing and checksums; returns ``(header, bodies, framed_sizes)``."""
    header = ContainerHeader.unpack(buf)
    pos = HEADER_SIZE
    bodies, sizes = {}, {}
    for name in SECTIONS:
        if pos + 8 > len(buf):
            raise CorruptContainerError("truncated before length prefix", name)
        (n,) = struct.unpack_from("<Q", buf, pos)
        if n > len(buf) - pos - SECTION_OVERHEAD:
            raise CorruptContainerError(f"length {n} runs past end of file", name)
        body = buf[pos + 8:pos + 8 + n]
        (crc,) = struct.unpack_from("<I", buf, pos + 8 + n)
        if crc != zlib.crc32(body):
            raise CorruptContainerError("checksum mismatch", name)
        bodies[name] = body
        sizes[name] = n + SECTION_OVERHEAD
        pos += n + SECTION_OVERHEAD
    if pos != len(buf):
        raise CorruptContainerError(f"{len(buf) - pos} trailing bytes after last section", "attributes")
    return header, bodies, sizes


def read_header(src) -> ContainerHeader:
    return split_sections(_read_bytes(src))[0]


def decode_container(src):
    """Decode a container (path or bytes).

    Returns ``(model, bits, diagnostics)`` where ``model`` is the lossy
    reconstruction in Morton order and ``bits`` the (C, B) bit assignment.
    """
    buf = _read_bytes(src)
    header, bodies, sizes = split_sections(buf)
    C, B, n = header.channels, header.blocks, header.point_count

    try:
        schema = parse_schema(bodies["schema"].decode("utf-8"))
    except Exception as exc:
        raise CorruptContainerError(f"unreadable schema: {exc}", "schema") from exc
    if sum(g.width for g in schema) != C or schema_digest(schema) != header.schema_digest:
        raise CorruptContainerError("schema does not match header", "schema")

    try:
        grid, origin, step = decode_geometry(bodies["geometry"], n, header.coord_bits)
    except CorruptStreamError as exc:
        raise CorruptContainerError(str(exc), "geometry") from exc
    if not (np.isfinite(origin).all() and np.isfinite(step).all() and (step > 0).all()):
        raise CorruptContainerError("invalid origin/step", "geometry")

    meta = unpack_metadata(bodies["metadata"], C * B)
    partition = make_partition(C, n, B)
    try:
        q = decode_attributes(bodies["attributes"], meta, partition)
        with np.errstate(over="ignore", invalid="ignore"):
            attrs = dequantize_attributes(q, partition)
            positions = dequantize_coordinates(grid, origin, step)
    except CorruptContainerError:
        raise
    except CorruptStreamError as exc:
        raise CorruptContainerError(str(exc), "attributes") from exc
    try:
        model = GaussianModel(positions, attrs, schema)
    except InvalidInputError as exc:
        raise CorruptContainerError(f"reconstruction is not finite: {exc}", "metadata") from exc
    diag = Diagnostics(
        header=header,
        section_sizes=sizes,
        group_symbols=partition.element_counts().copy(),
        group_bytes=meta["length"].reshape(C, B).astype(np.int64),
        stored_packed=((meta["flags"] & FLAG_STORED) != 0).reshape(C, B),
        constant=q.constant,
        scales=q.scales,
        file_size=len(buf),
        extra={"grid": grid, "origin": origin, "step": step, "symbols": q.symbols, "quantized": q},
    )
    return model, q.bits, diag


def file_size(path) -> int:
    return os.path.getsize(path)
