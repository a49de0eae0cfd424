import numpy as np
import pytest

from gsbudget.errors import InvalidInputError, MalformedInputError, SchemaError
from gsbudget.model import (Activation, ChannelSchema, GaussianModel, apply_permutation, dequantize_coordinates,
                            format_schema, load_model, morton_codes, morton_sort, parse_schema,
                            quantize_coordinates, save_model, schema_3dgs, schema_scaffold)

from conftest import make_model


def _ply(path, header_props, rows):
    lines = ["ply", "format ascii 1.0", f"element vertex {len(rows)}"]
    lines += [f"property float {p}" for p in header_props]
    lines.append("end_header")
    lines += [" ".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def test_load_three_points(tmp_path):
    p = tmp_path / "m.ply"
    _ply(p, ["x", "y", "z", "opacity"], [(0, 0, 0, 1), (1, 2, 3, 2), (4, 5, 6, 3)])
    m = load_model(p, parse_schema("pos 3\nopacity 1"))
    assert m.n_points == 3 and m.n_channels == 1
    np.testing.assert_array_equal(m.attributes[0], [1, 2, 3])
    np.testing.assert_array_equal(m.positions[1], [1, 2, 3])


def test_scaffold_channel_count():
    for k in (1, 5, 10):
        assert sum(g.width for g in schema_scaffold(k)) == 38 + 3 * k


def test_3dgs_channel_count():
    assert sum(g.width for g in schema_3dgs(3)) == 1 + 3 + 4 + 3 + 45


def test_empty_file_is_malformed(tmp_path):
    p = tmp_path / "empty.ply"
    p.write_bytes(b"")
    with pytest.raises(MalformedInputError):
        load_model(p, parse_schema("opacity 1"))


def test_garbage_file_is_malformed(tmp_path):
    p = tmp_path / "junk.ply"
    p.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n1\n")
    with pytest.raises(MalformedInputError):
        load_model(p, parse_schema("opacity 1"))


def test_width_mismatch_is_schema_error(tmp_path):
    p = tmp_path / "m.ply"
    _ply(p, ["x", "y", "z", "f_0", "f_1"], [(0, 0, 0, 1, 2)])
    with pytest.raises(SchemaError):
        load_model(p, parse_schema("f 3"))


def test_schema_text_round_trip():
    schema = schema_3dgs(1)
    assert parse_schema(format_schema(schema)) == schema
    assert parse_schema("# c\nopacity, 1, sigmoid\nscale: 3 exp\n") == (
        ChannelSchema("opacity", 1, Activation.SIGMOID), ChannelSchema("scale", 3, Activation.EXP))


def test_save_load_round_trip(tmp_path):
    m = make_model(50, 7)
    save_model(m, tmp_path / "m.ply")
    back = load_model(tmp_path / "m.ply", m.schema)
    np.testing.assert_array_equal(back.positions, m.positions)
    np.testing.assert_array_equal(back.attributes, m.attributes)


def test_external_importance_column(tmp_path):
    m = make_model(5)
    m.importance = np.arange(5.0)
    save_model(m, tmp_path / "m.ply")
    np.testing.assert_array_equal(load_model(tmp_path / "m.ply", m.schema).importance, np.arange(5.0))


def test_quantize_endpoints():
    grid, origin, step = quantize_coordinates(np.array([[0.0, 0, 0], [1, 1, 1]]), 1)
    np.testing.assert_array_equal(grid, [[0, 0, 0], [1, 1, 1]])


def test_quantize_degenerate_axis():
    grid, origin, step = quantize_coordinates(np.full((4, 3), 2.5), 8)
    assert not grid.any()
    np.testing.assert_array_equal(step, [1, 1, 1])


def test_quantize_half_to_even():
    pos = np.zeros((3, 3))
    pos[:, 0] = [0, 0.5, 1]
    grid, _, _ = quantize_coordinates(pos, 2)
    np.testing.assert_array_equal(grid[:, 0], [0, 2, 3])


def test_quantize_rejects_non_finite():
    pos = np.zeros((2, 3))
    pos[1, 2] = np.nan
    with pytest.raises(InvalidInputError):
        quantize_coordinates(pos, 8)


def test_dequantize_within_half_step(rng):
    pos = rng.normal(size=(500, 3)) * 10
    grid, origin, step = quantize_coordinates(pos, 12)
    err = np.abs(dequantize_coordinates(grid, origin, step) - pos)
    assert (err <= step / 2 * (1 + 1e-9)).all()


def _interleave_oracle(x, y, z, bits):
    code = 0
    for b in range(bits):
        code |= ((x >> b) & 1) << (3 * b)
        code |= ((y >> b) & 1) << (3 * b + 1)
        code |= ((z >> b) & 1) << (3 * b + 2)
    return code


def test_morton_examples():
    codes = morton_codes(np.array([[0, 0, 0], [1, 1, 1], [2, 3, 1]], dtype=np.uint64))
    assert codes.tolist() == [0, 7, 30]


def test_morton_matches_oracle(rng):
    for bits in (5, 16, 21):
        g = rng.integers(0, 2**bits, size=(300, 3), dtype=np.uint64)
        expect = [_interleave_oracle(int(a), int(b), int(c), bits) for a, b, c in g]
        assert [int(c) for c in morton_codes(g)] == expect
        assert max(expect) < 2 ** (3 * bits)


def test_morton_sort_is_stable():
    g = np.array([[1, 0, 0], [0, 0, 0], [1, 0, 0], [0, 0, 0]], dtype=np.uint64)
    assert morton_sort(g).permutation.tolist() == [1, 3, 0, 2]


def test_permutation_identity_reversal_inverse(rng):
    m = make_model(2)
    same = apply_permutation(m, np.arange(2))
    np.testing.assert_array_equal(same.attributes, m.attributes)
    rev = apply_permutation(m, np.array([1, 0]))
    np.testing.assert_array_equal(rev.positions, m.positions[::-1])
    np.testing.assert_array_equal(rev.attributes, m.attributes[:, ::-1])
    big = make_model(100, 6)
    idx = morton_sort(quantize_coordinates(big, 10)[0])
    back = apply_permutation(apply_permutation(big, idx), idx.inverse())
    np.testing.assert_array_equal(back.positions, big.positions)
    np.testing.assert_array_equal(back.attributes, big.attributes)


def test_permutation_length_mismatch():
    with pytest.raises(InvalidInputError):
        apply_permutation(make_model(3), np.array([0, 1]))


def test_model_validation():
    with pytest.raises(SchemaError):
        GaussianModel(np.zeros((3, 3)), np.zeros((2, 3)), (ChannelSchema("a", 1),))
    with pytest.raises(InvalidInputError):
        GaussianModel(np.zeros((3, 2)), np.zeros((1, 3)), (ChannelSchema("a", 1),))
