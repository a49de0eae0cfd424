"""Gaussian-splat point models: schemas, PLY ingestion, coordinate grids and Morton order.

A model is split into *geometry* (the N x 3 centres) and *attributes* (every
other per-point scalar, stored channel-major as a C x N matrix).  Attribute
channels are described by an ordered list of :class:`ChannelSchema` groups,
e.g. ``scale`` of width 3 expands to the PLY columns ``scale_0..scale_2``.
"""
from __future__ import annotations

import enum
import hashlib
import os
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError

from .errors import InvalidInputError, MalformedInputError, SchemaError

GEOMETRY_NAMES = ("pos", "xyz", "position")
POSITION_COLUMNS = ("x", "y", "z")
IMPORTANCE_COLUMN = "importance"


class Activation(str, enum.Enum):
    IDENTITY = "identity"
    SIGMOID = "sigmoid"
    EXP = "exp"


@dataclass(frozen=True)
class ChannelSchema:
    name: str
    width: int
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        if self.width < 1:
            raise SchemaError(f"channel group {self.name!r}: width must be >= 1, got {self.width}")
        if not self.name or any(c.isspace() for c in self.name):
            raise SchemaError(f"invalid channel group name {self.name!r}")
        object.__setattr__(self, "activation", Activation(self.activation))

    def columns(self):
        """PLY column names backing this group."""
        if self.width == 1:
            return [self.name]
        return [f"{self.name}_{k}" for k in range(self.width)]


Schema = Sequence[ChannelSchema]


def _check_schema(schema):
    names = [c.name for c in schema]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise SchemaError(f"duplicate channel group names: {sorted(dup)}")
    if not schema:
        raise SchemaError("schema must contain at least one attribute channel group")


def parse_schema(text: str) -> tuple:
    """Parse a schema descriptor: one ``name width [activation]`` per line.

    ``#`` starts a comment.  A line named ``pos``/``xyz``/``position`` declares
    the geometry (it must have width 3) and is not part of the attribute schema.
    """
    groups = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").replace(":", " ").split()
        if len(parts) not in (2, 3):
            raise SchemaError(f"schema line {lineno}: expected 'name width [activation]', got {raw!r}")
        name, width_s = parts[0], parts[1]
        try:
            width = int(width_s)
        except ValueError:
            raise SchemaError(f"schema line {lineno}: width {width_s!r} is not an integer") from None
        if name in GEOMETRY_NAMES:
            if width != 3:
                raise SchemaError(f"schema line {lineno}: geometry group {name!r} must have width 3")
            continue
        act = parts[2] if len(parts) == 3 else "identity"
        try:
            act = Activation(act)
        except ValueError:
            raise SchemaError(
                f"schema line {lineno}: unknown activation {act!r} "
                f"(expected one of {[a.value for a in Activation]})"
            ) from None
        groups.append(ChannelSchema(name, width, act))
    _check_schema(groups)
    return tuple(groups)


def format_schema(schema: Schema) -> str:
    lines = ["pos 3"]
    lines += [f"{c.name} {c.width} {c.activation.value}" for c in schema]
    return "\n".join(lines) + "\n"


def schema_digest(schema: Schema) -> bytes:
    """8-byte digest identifying a schema (stored in container headers)."""
    return hashlib.sha256(format_schema(schema).encode()).digest()[:8]


def resolve_schema(schema) -> tuple:
    """Accept a list of groups, a descriptor string or a descriptor file path."""
    if isinstance(schema, (str, os.PathLike)):
        text = str(schema)
        if os.path.exists(text) and "\n" not in text:
            with open(text, encoding="utf-8") as fh:
                text = fh.read()
        return parse_schema(text)
    schema = tuple(schema)
    _check_schema(schema)
    return schema


# presets for the common layouts -------------------------------------------------

def schema_3dgs(sh_degree: int = 3) -> tuple:
    rest = 3 * (sh_degree + 1) ** 2 - 3
    groups = [ChannelSchema("f_dc", 3)]
    if rest:
        groups.append(ChannelSchema("f_rest", rest))
    groups += [
        ChannelSchema("opacity", 1, Activation.SIGMOID),
        ChannelSchema("scale", 3, Activation.EXP),
        ChannelSchema("rot", 4),
    ]
    return tuple(groups)


def schema_scaffold(n_offsets: int = 10) -> tuple:
    """Anchor-based layout: 32-d context feature, 6 scalings and k 3-d offsets."""
    groups = [ChannelSchema("f", 32), ChannelSchema("l", 6, Activation.EXP)]
    if n_offsets:
        groups.append(ChannelSchema("O", 3 * n_offsets))
    return tuple(groups)


def schema_4dgs(sh_degree: int = 3) -> tuple:
    # time coordinate t is an attribute; only the spatial centre is Morton coded
    return schema_3dgs(sh_degree) + (
        ChannelSchema("t", 1),
        ChannelSchema("scale_t", 1, Activation.EXP),
        ChannelSchema("rot_r", 4),
    )


@dataclass
class GaussianModel:
    positions: np.ndarray
    attributes: np.ndarray
    schema: tuple
    importance: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.attributes = np.ascontiguousarray(self.attributes, dtype=np.float64)
        self.schema = resolve_schema(self.schema)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise InvalidInputError(f"positions must be N x 3, got {self.positions.shape}")
        n = self.positions.shape[0]
        if n < 1:
            raise InvalidInputError("a model needs at least one point")
        c = sum(g.width for g in self.schema)
        if self.attributes.shape != (c, n):
            raise SchemaError(f"attributes have shape {self.attributes.shape}, schema implies {(c, n)}")
        if not np.isfinite(self.attributes).all():
            raise InvalidInputError("attribute values must be finite")
        if self.importance is not None:
            imp = np.ascontiguousarray(self.importance, dtype=np.float64)
            if imp.shape != (n,):
                raise InvalidInputError(f"importance must have length {n}, got shape {imp.shape}")
            if not np.isfinite(imp).all() or (imp < 0).any():
                raise InvalidInputError("importance values must be finite and non-negative")
            self.importance = imp

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]

    @property
    def n_channels(self) -> int:
        return self.attributes.shape[0]

    def channel_slice(self, name: str) -> slice:
        start = 0
        for g in self.schema:
            if g.name == name:
                return slice(start, start + g.width)
            start += g.width
        raise KeyError(name)

    def group(self, name: str) -> ChannelSchema:
        for g in self.schema:
            if g.name == name:
                return g
        raise KeyError(name)

    def copy(self) -> "GaussianModel":
        return GaussianModel(
            self.positions.copy(),
            self.attributes.copy(),
            self.schema,
            None if self.importance is None else self.importance.copy(),
        )


# PLY I/O ----------------------------------------------------------------------

def _group_columns(names: Iterable[str], group: ChannelSchema):
    """Columns in the file that belong to ``group`` (validated against its width)."""
    names = list(names)
    if group.width == 1 and group.name in names:
        return [group.name]
    pat = re.compile(rf"^{re.escape(group.name)}_(\d+)$")
    found = sorted((int(m.group(1)), n) for n in names if (m := pat.match(n)))
    if len(found) != group.width or [k for k, _ in found] != list(range(group.width)):
        raise SchemaError(
            f"channel group {group.name!r} declares width {group.width} but the file has "
            f"{len(found)} matching column(s): {[n for _, n in found]}"
        )
    return [n for _, n in found]


def load_model(path, schema) -> GaussianModel:
    """Load a PLY vertex table (binary little-endian or ascii) under ``schema``.

    A column named ``importance`` is picked up as an externally computed
    per-point importance score.
    """
    schema = resolve_schema(schema)
    try:
        ply = PlyData.read(str(path))
    except PlyParseError as exc:
        raise MalformedInputError(f"{path}: {exc}") from exc
    except (ValueError, UnicodeDecodeError, EOFError) as exc:
        raise MalformedInputError(f"{path}: {exc}") from exc
    if "vertex" not in ply:
        raise MalformedInputError(f"{path}: no 'vertex' element")
    vert = ply["vertex"]
    data = vert.data
    names = list(data.dtype.names or ())
    for col in POSITION_COLUMNS:
        if col not in names:
            raise MalformedInputError(f"{path}: missing position column {col!r}")
    if len(data) == 0:
        raise MalformedInputError(f"{path}: vertex element is empty")
    positions = np.stack([np.asarray(data[c], dtype=np.float64) for c in POSITION_COLUMNS], axis=1)
    if not np.isfinite(positions).all():
        raise InvalidInputError(f"{path}: non-finite coordinates")
    rows = []
    for g in schema:
        for col in _group_columns(names, g):
            rows.append(np.asarray(data[col], dtype=np.float64))
    attributes = np.stack(rows, axis=0)
    importance = None
    if IMPORTANCE_COLUMN in names:
        importance = np.asarray(data[IMPORTANCE_COLUMN], dtype=np.float64)
    return GaussianModel(positions, attributes, schema, importance)


def save_model(model: GaussianModel, path, dtype: str = "f8", text: bool = False) -> None:
    """Write ``model`` as a PLY vertex table (binary little-endian unless ``text``)."""
    cols = list(POSITION_COLUMNS)
    for g in model.schema:
        cols += g.columns()
    if model.importance is not None:
        cols.append(IMPORTANCE_COLUMN)
    arr = np.empty(model.n_points, dtype=[(c, dtype) for c in cols])
    for d, c in enumerate(POSITION_COLUMNS):
        arr[c] = model.positions[:, d]
    k = 0
    for g in model.schema:
        for c in g.columns():
            arr[c] = model.attributes[k]
            k += 1
    if model.importance is not None:
        arr[IMPORTANCE_COLUMN] = model.importance
    el = PlyElement.describe(arr, "vertex")
    PlyData([el], text=text, byte_order="<").write(str(path))


# coordinate grid and Morton order ---------------------------------------------

def quantize_coordinates(model_or_positions, bits: int = 16):
    """Snap positions onto a ``2**bits`` grid spanning the per-axis bounding box.

    Returns ``(grid, origin, step)``; an axis with zero extent gets step 1.
    """
    pos = model_or_positions.positions if isinstance(model_or_positions, GaussianModel) else model_or_positions
    pos = np.asarray(pos, dtype=np.float64)
    if not 1 <= bits <= 32:
        raise InvalidInputError(f"coordinate bits must be in [1, 32], got {bits}")
    if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
        raise InvalidInputError(f"positions must be N x 3 with N >= 1, got {pos.shape}")
    if not np.isfinite(pos).all():
        raise InvalidInputError("non-finite coordinates")
    origin = pos.min(axis=0)
    extent = pos.max(axis=0) - origin
    levels = float(2**bits - 1)
    step = np.where(extent > 0, extent / levels, 1.0)
    grid = np.rint((pos - origin) / step)
    grid = np.clip(grid, 0, levels).astype(np.uint64)
    return grid, origin, step


def dequantize_coordinates(grid, origin, step) -> np.ndarray:
    return np.asarray(origin, dtype=np.float64) + np.asarray(grid, dtype=np.float64) * np.asarray(step, dtype=np.float64)


@dataclass
class MortonIndex:
    codes: np.ndarray
    permutation: np.ndarray

    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.permutation)
        inv[self.permutation] = np.arange(len(self.permutation), dtype=self.permutation.dtype)
        return inv


def _spread3(v):
    # spread the low 21 bits of v so that bit k lands at bit 3k
    v = v & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x001F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x001F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def morton_codes(grid) -> np.ndarray:
    """Interleave x, y, z bits (x least significant).

    Grids up to 21 bits per axis give ``uint64`` codes; wider grids fall back to
    Python integers in an object array.
    """
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.shape[1] != 3:
        raise InvalidInputError(f"grid must be N x 3, got {grid.shape}")
    if grid.size and (grid.min() < 0):
        raise InvalidInputError("grid values must be non-negative")
    g = grid.astype(np.uint64)
    if g.size == 0 or int(g.max()) < (1 << 21):
        return _spread3(g[:, 0]) | (_spread3(g[:, 1]) << np.uint64(1)) | (_spread3(g[:, 2]) << np.uint64(2))
    out = np.empty(len(g), dtype=object)
    for i, (x, y, z) in enumerate(g.tolist()):
        code = 0
        for k in range(max(x.bit_length(), y.bit_length(), z.bit_length())):
            code |= ((x >> k) & 1) << (3 * k) | ((y >> k) & 1) << (3 * k + 1) | ((z >> k) & 1) << (3 * k + 2)
        out[i] = code
    return out


def morton_sort(grid) -> MortonIndex:
    codes = morton_codes(grid)
    perm = np.argsort(codes, kind="stable").astype(np.int64)
    return MortonIndex(codes, perm)


def apply_permutation(model: GaussianModel, index: Union[MortonIndex, np.ndarray]) -> GaussianModel:
    """Reorder geometry, attributes and importance with the same permutation."""
    perm = index.permutation if isinstance(index, MortonIndex) else np.asarray(index)
    n = model.n_points
    if perm.shape != (n,):
        raise InvalidInputError(f"permutation has length {perm.shape}, model has {n} points")
    if not np.array_equal(np.sort(perm), np.arange(n)):
        raise InvalidInputError("index is not a permutation of [0, N)")
    return GaussianModel(
        model.positions[perm],
        model.attributes[:, perm],
        model.schema,
        None if model.importance is None else model.importance[perm],
    )


def take_points(model: GaussianModel, idx) -> GaussianModel:
    idx = np.asarray(idx)
    return GaussianModel(
        model.positions[idx],
        model.attributes[:, idx],
        model.schema,
        None if model.importance is None else model.importance[idx],
    )
