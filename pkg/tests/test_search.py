import numpy as np
import pytest

from gsbudget.errors import InfeasibleError, InvalidBudgetError, InvalidInputError
from gsbudget.pipeline import prepare
from gsbudget.search import SearchConfig, emit_trace, read_trace, run_search, trace_csv
from gsbudget.synth import synthetic_model


@pytest.fixture(scope="module")
def model10k():
    return synthetic_model(10_000, 10, seed=21)


def _full(model, tau, blocks, bits):
    return len(prepare(model, tau, blocks).encode(np.full((model.n_channels, blocks), bits)))


def test_saturated_budget(model10k):
    budget = _full(model10k, 1.0, 20, 16)
    out = run_search(model10k, SearchConfig(budget, blocks=20))
    assert out.tau_star == 1.0 and not out.best_effort
    assert (out.assignment == 16).all()
    assert [r.iter for r in out.trace if r.tau == 1.0] == [1]


@pytest.mark.parametrize("frac", [0.2, 0.35, 0.5, 0.8])
def test_budgets_spanning_4x(model10k, frac):
    budget = int(_full(model10k, 1.0, 20, 16) * frac)
    out = run_search(model10k, SearchConfig(budget, blocks=20))
    assert not out.best_effort
    assert out.relative_error(budget) < 0.05
    assert out.achieved_size == len(out.container) == len(out.prepared.encode(out.assignment))


def test_more_budget_less_loss_at_fixed_tau(model10k):
    full = _full(model10k, 0.6, 20, 16)
    losses = [run_search(model10k, SearchConfig(int(full * f), tau_grid=(0.6,), blocks=20)).total_loss
              for f in (0.4, 0.6, 0.9)]
    assert losses[0] >= losses[1] >= losses[2]


def test_skip_rule_payload_doubles(model10k):
    P = prepare(model10k, 0.5, 20).partition.element_counts()
    assert int((P * 16).sum()) == 2 * int((P * 8).sum())


def test_skipped_taus_recorded(model10k):
    budget = int(_full(model10k, 1.0, 20, 16) * 0.9)
    out = run_search(model10k, SearchConfig(budget, blocks=20))
    assert 0.3 in out.skipped
    assert all(r.tau not in out.skipped for r in out.trace)


def test_deterministic(model10k):
    cfg = SearchConfig(150_000, blocks=20)
    a, b = run_search(model10k, cfg), run_search(model10k, cfg)
    assert a.container == b.container and a.tau_star == b.tau_star


def test_infeasible(model10k):
    with pytest.raises(InfeasibleError):
        run_search(model10k, SearchConfig(500, blocks=20))


def test_best_effort_when_budget_unreachable(model10k):
    budget = 3 * _full(model10k, 1.0, 20, 16)
    out = run_search(model10k, SearchConfig(budget, blocks=20))
    assert out.best_effort and out.tau_star == 1.0 and (out.assignment == 16).all()


def test_trace_file(model10k, tmp_path):
    budget = _full(model10k, 1.0, 20, 16)
    out = run_search(model10k, SearchConfig(budget, tau_grid=(1.0,), blocks=20))
    emit_trace(out, tmp_path / "a.csv")
    emit_trace(out, tmp_path / "b.csv")
    text = (tmp_path / "a.csv").read_text()
    assert text == (tmp_path / "b.csv").read_text() == trace_csv(out)
    assert text.splitlines()[0] == "tau,iter,S_a,S_T,S_delta,objective,elapsed_ms"
    rows = read_trace(tmp_path / "a.csv")
    assert len(rows) == 1
    assert abs(rows[-1].S_a - budget) / budget < 0.05


def test_config_validation():
    with pytest.raises(InvalidBudgetError):
        SearchConfig(0)
    with pytest.raises(InvalidInputError):
        SearchConfig(10, tau_grid=())
    with pytest.raises(InvalidInputError):
        SearchConfig(10, tau_grid=(0.5, 0.3))
    with pytest.raises(InvalidInputError):
        SearchConfig(10, tau_grid=(0.0, 0.3))
    with pytest.raises(InvalidInputError):
        SearchConfig(10, tolerance=0)
    with pytest.raises(ValueError):
        SearchConfig(10, norm="l3")
