import numpy as np
import pytest

from gsbudget.errors import InvalidInputError
from gsbudget.pipeline import prepare
from gsbudget.size_model import SizeEstimate, calibrate, estimate_size, measure_fixed_cost

from conftest import make_model


def test_direct_arithmetic():
    est = SizeEstimate(np.array([[1000, 1000]]), 100, 10_000)
    assert estimate_size(est, [[8, 16]]) == 3100


def test_linearity_and_offset():
    P = np.array([[800, 808, 16]])
    est = SizeEstimate(P, 40, 10**6)
    base = estimate_size(est, [[3, 3, 3]])
    assert estimate_size(est, [[4, 3, 3]]) - base == 100
    assert estimate_size(est, [[3, 4, 3]]) - base == 101
    shifted = SizeEstimate(P, 40, 10**6, delta=-500)
    assert estimate_size(shifted, [[3, 3, 3]]) == base - 500


def test_calibrate_sign_and_idempotence():
    P = np.array([[1000, 1000]])
    bits = [[8, 8]]
    target = 2000 + 100
    est = SizeEstimate(P, 100, target)
    assert estimate_size(est, bits) == target
    assert calibrate(est, target, bits).delta == 0
    c = calibrate(est, target + 10**6, bits)
    assert c.delta == 10**6
    assert c.payload_budget_bits() == est.payload_budget_bits() - 8 * 10**6
    assert calibrate(c, target + 10**6, bits) == c
    assert estimate_size(c, bits) == target + 10**6


def test_shape_and_budget_checks():
    with pytest.raises(InvalidInputError):
        SizeEstimate(np.ones((1, 2), dtype=np.int64), 10, 0)
    with pytest.raises(InvalidInputError):
        SizeEstimate(np.ones((1, 2), dtype=np.int64), 10, 100).payload_bits([[1, 2, 3]])


def test_fixed_cost_is_measured():
    p = prepare(make_model(1), 1.0, 1)
    parts = p.fixed_parts()
    assert measure_fixed_cost(parts) == sum(len(x) for x in parts) > 0
    assert measure_fixed_cost(prepare(make_model(1), 1.0, 1).fixed_parts()) == measure_fixed_cost(parts)


def test_fixed_cost_grows_with_blocks():
    m = make_model(400, 6)
    a = measure_fixed_cost(prepare(m, 1.0, 10).fixed_parts())
    b = measure_fixed_cost(prepare(m, 1.0, 20).fixed_parts())
    assert b > a


def test_fixed_plus_streams_is_container_size(rng):
    m = make_model(2000, 8, seed=3)
    p = prepare(m, 0.8, 12)
    for _ in range(3):
        bits = rng.integers(1, 17, size=(8, 12))
        fixed, stream = p.encode_parts(bits)
        assert len(p.encode(bits)) == measure_fixed_cost(fixed) + len(stream)


def test_calibration_stabilizes(small_model):
    p = prepare(small_model, 1.0, 10)
    est = SizeEstimate(p.partition.element_counts(), measure_fixed_cost(p.fixed_parts()), 60_000)
    bits = np.full((10, 10), 6)
    deltas = []
    for _ in range(4):
        est = calibrate(est, len(p.encode(bits)), bits)
        deltas.append(est.delta)
    assert len(set(deltas)) == 1
