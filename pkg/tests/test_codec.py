import numpy as np
import pytest

from gsbudget import codec
from gsbudget.errors import CorruptContainerError, InvalidInputError
from gsbudget.model import morton_sort
from gsbudget.pipeline import prepare
from gsbudget.quantizer import make_partition, quantize_attributes

from conftest import make_model


def _sorted_grid(rng, n, bits=16):
    g = rng.integers(0, 2**bits, size=(n, 3), dtype=np.uint64)
    return g[morton_sort(g).permutation]


def test_single_point_geometry():
    g = np.zeros((1, 3), dtype=np.uint64)
    body = codec.encode_geometry(g, np.zeros(3), np.ones(3))
    out, origin, step = codec.decode_geometry(body, 1, 16)
    np.testing.assert_array_equal(out, g)


def test_duplicate_positions_compress():
    g = np.full((5000, 3), 77, dtype=np.uint64)
    body = codec.encode_geometry(g, np.zeros(3), np.ones(3))
    assert len(body) < 0.05 * 3 * 16 * 5000 / 8
    np.testing.assert_array_equal(codec.decode_geometry(body, 5000, 16)[0], g)


def test_geometry_round_trip(rng):
    for bits in (1, 8, 16, 21):
        g = _sorted_grid(rng, 1000, bits)
        origin, step = rng.normal(size=3), rng.random(3) + 0.1
        out, o2, s2 = codec.decode_geometry(codec.encode_geometry(g, origin, step), 1000, bits)
        np.testing.assert_array_equal(out, g)
        np.testing.assert_array_equal(o2, origin)
        np.testing.assert_array_equal(s2, step)


def test_unsorted_geometry_rejected():
    g = np.array([[1, 0, 0], [0, 0, 0]], dtype=np.uint64)
    with pytest.raises(InvalidInputError):
        codec.encode_geometry(g, np.zeros(3), np.ones(3))


def test_constant_group_has_no_payload():
    a = np.ones((1, 100))
    part = make_partition(1, 100, 1)
    stream, meta = codec.encode_attributes(quantize_attributes(a, part, [[9]]), part)
    assert stream == b"" and meta["length"][0] == 0 and meta["flags"][0] & codec.FLAG_CONSTANT


def test_uniform_symbols_near_payload(rng):
    part = make_partition(4, 20_000, 5)
    a = rng.random((4, 20_000))
    for b in (4, 8, 12, 16):
        stream, _ = codec.encode_attributes(quantize_attributes(a, part, np.full((4, 5), b)), part)
        payload = 4 * 20_000 * b / 8
        assert len(stream) <= payload * 1.05


def test_skewed_symbols_below_payload(rng):
    part = make_partition(1, 50_000, 1)
    a = np.minimum(rng.geometric(0.3, size=(1, 50_000)), 255).astype(float)
    stream, _ = codec.encode_attributes(quantize_attributes(a, part, [[8]]), part)
    assert len(stream) < 0.6 * 50_000


def test_container_round_trip_and_bound(rng, tmp_path):
    m = make_model(3000, 9, seed=2)
    p = prepare(m, 0.9, 11)
    bits = rng.integers(1, 17, size=(9, 11))
    q = p.quantize(bits)
    stream, meta = codec.encode_attributes(q, p.partition)
    n = codec.write_container(p.header(), p.schema_text, p.geometry, meta, stream, tmp_path / "c.sgsc")
    assert n == codec.file_size(tmp_path / "c.sgsc")
    model, bits_back, diag = codec.decode_container(tmp_path / "c.sgsc")
    np.testing.assert_array_equal(bits_back, bits)
    np.testing.assert_array_equal(diag.extra["symbols"], q.symbols)
    np.testing.assert_array_equal(diag.extra["grid"], p.grid)
    err = np.abs(model.attributes - p.model.attributes)
    for j in range(11):
        sl = p.partition.block_slice(j)
        assert (err[:, sl].max(axis=1) <= q.scales[:, j] * (1 + 1e-12)).all()
    assert (np.abs(model.positions - p.model.positions) <= diag.extra["step"] / 2 * (1 + 1e-9) + 1e-12).all()
    assert codec.HEADER_SIZE + sum(diag.section_sizes.values()) == n
    hdr = codec.read_header(tmp_path / "c.sgsc")
    assert (hdr.point_count, hdr.channels, hdr.blocks) == (p.n_kept, 9, 11)


def test_deterministic_bytes():
    m = make_model(500, 5, seed=4)
    bits = np.full((5, 4), 7)
    assert prepare(m, 0.5, 4).encode(bits) == prepare(m, 0.5, 4).encode(bits)


def test_flipped_magic():
    buf = bytearray(prepare(make_model(100), 1.0, 2).encode(np.full((4, 2), 8)))
    buf[0] ^= 0xFF
    with pytest.raises(CorruptContainerError) as exc:
        codec.decode_container(bytes(buf))
    assert exc.value.section == "header"


def test_mutations_always_typed(rng):
    buf = prepare(make_model(300, 6), 1.0, 3).encode(rng.integers(1, 17, (6, 3)))
    for _ in range(300):
        b = bytearray(buf)
        k = int(rng.integers(0, len(b)))
        b[k] = (b[k] + int(rng.integers(1, 256))) % 256
        with pytest.raises(CorruptContainerError):
            codec.decode_container(bytes(b))
    for cut in (0, 5, 40, len(buf) - 1):
        with pytest.raises(CorruptContainerError):
            codec.decode_container(buf[:cut])


def test_packed_metadata_round_trip_and_rejects_damage():
    from gsbudget.codec import META_DTYPE, pack_metadata, unpack_metadata
    from gsbudget.errors import CorruptContainerError
    meta = np.zeros(4, dtype=META_DTYPE)
    meta["flags"] = [8, 0x80, 3, 16]
    meta["scale"] = [0.25, 0.0, 1.5, 1e-3]
    meta["zero"] = [-7, 0, 123456789, 0]
    meta["min"] = -meta["zero"] * meta["scale"]
    meta["min"][1] = 2.5
    meta["length"] = [10, 0, 300, 70000]
    blob = pack_metadata(meta)
    assert len(blob) < meta.nbytes
    back = unpack_metadata(blob, 4)
    for name in ("flags", "scale", "zero", "length", "min"):
        np.testing.assert_array_equal(back[name], meta[name])
    with pytest.raises(CorruptContainerError):
        unpack_metadata(blob + b"\x00", 4)
    with pytest.raises(CorruptContainerError):
        unpack_metadata(blob[:-1], 4)
