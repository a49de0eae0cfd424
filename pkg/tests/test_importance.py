import numpy as np
import pytest

from gsbudget.errors import InvalidBudgetError, SchemaError
from gsbudget.importance import importance_scores, proxy_importance, prune, select_survivors, survivor_count
from gsbudget.model import Activation, ChannelSchema, GaussianModel

from conftest import make_model

IDENT = (ChannelSchema("opacity", 1, Activation.IDENTITY), ChannelSchema("scale", 3, Activation.IDENTITY))


def _model(attrs, schema=IDENT):
    attrs = np.asarray(attrs, dtype=float)
    return GaussianModel(np.zeros((attrs.shape[1], 3)), attrs, schema)


def test_zero_opacity_scores_zero():
    m = make_model(1)
    m.attributes[0, 0] = -1e4
    assert proxy_importance(m)[0] == 0.0


def test_identity_product():
    assert proxy_importance(_model([[2.0], [1], [1], [1]]))[0] == pytest.approx(2.0)


def test_monotone_in_opacity():
    s = proxy_importance(_model([[3.0, 1.0], [1, 1], [2, 2], [1, 1]]))
    assert s[0] > s[1]


def test_missing_channels():
    with pytest.raises(SchemaError, match="importance"):
        proxy_importance(GaussianModel(np.zeros((2, 3)), np.zeros((1, 2)), (ChannelSchema("f", 1),)))


def test_external_scores_win():
    m = make_model(4)
    m.importance = np.array([4.0, 3, 2, 1])
    np.testing.assert_array_equal(importance_scores(m), m.importance)


def test_top_half():
    scores = np.random.default_rng(0).permutation(10).astype(float)
    keep = select_survivors(scores, 0.5)
    assert sorted(keep.tolist()) == sorted(np.argsort(-scores)[:5].tolist())


def test_tau_one_identity():
    m = make_model(9)
    assert prune(m, np.ones(9), 1.0) is m


def test_equal_scores_keep_lowest_indices():
    assert select_survivors(np.ones(4), 0.5).tolist() == [0, 1]


def test_invalid_tau():
    with pytest.raises(InvalidBudgetError):
        select_survivors(np.ones(4), 0.0)


@pytest.mark.parametrize("n", [1, 7, 10, 333])
def test_survivor_count_is_ceiling(n):
    for tau in np.linspace(0.01, 1, 37):
        k = len(select_survivors(np.arange(n, dtype=float), tau))
        assert k == survivor_count(n, tau) == max(1, int(np.ceil(round(tau * n, 9))))


def test_nested_and_idempotent(rng):
    scores = rng.random(200)
    a = set(select_survivors(scores, 0.3).tolist())
    b = set(select_survivors(scores, 0.7).tolist())
    assert a <= b
    m = make_model(200)
    p = prune(m, scores, 0.4)
    again = prune(p, np.ones(p.n_points), 1.0)
    np.testing.assert_array_equal(again.attributes, p.attributes)
