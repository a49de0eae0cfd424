"""Outer search over reserve ratios with an inner calibrate/solve/recompress loop."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InfeasibleError, InvalidBudgetError, InvalidInputError
from .mckp import DEFAULT_TIME_LIMIT, Status, solve_hierarchical
from .model import GaussianModel
from .importance import importance_scores
from .pipeline import PreparedModel, prepare
from .quantizer import Norm
from .size_model import SizeEstimate, calibrate, measure_fixed_cost

log = logging.getLogger(__name__)

DEFAULT_TAU_GRID = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
TRACE_FIELDS = ("tau", "iter", "S_a", "S_T", "S_delta", "objective", "elapsed_ms")


@dataclass
class SearchConfig:
    budget: int
    tau_grid: tuple = DEFAULT_TAU_GRID
    tolerance: float = 0.05
    max_inner_iters: int = 8
    norm: str = "l2"
    blocks: int = 30
    q_max: int = 16
    coord_bits: int = 16
    time_limit: float = DEFAULT_TIME_LIMIT
    threads: int = 1

    def __post_init__(self):
        self.budget = int(self.budget)
        if self.budget <= 0:
            raise InvalidBudgetError(f"budget must be positive, got {self.budget}")
        grid = tuple(float(t) for t in self.tau_grid)
        if not grid:
            raise InvalidInputError("tau grid is empty")
        if any(not 0 < t <= 1 for t in grid):
            raise InvalidInputError(f"tau values must lie in (0, 1]: {grid}")
        if list(grid) != sorted(set(grid)):
            raise InvalidInputError("tau grid must be strictly ascending")
        self.tau_grid = grid
        if self.tolerance <= 0:
            raise InvalidInputError("tolerance must be positive")
        if self.max_inner_iters < 1:
            raise InvalidInputError("need at least one inner iteration")
        if not 1 <= self.q_max <= 16:
            raise InvalidInputError("q_max must lie in [1, 16]")
        self.norm = Norm(self.norm).value


@dataclass(frozen=True)
class TraceRow:
    tau: float
    iter: int
    S_a: int
    S_T: int
    S_delta: int
    objective: float
    elapsed_ms: float


@dataclass
class SearchOutcome:
    tau_star: float
    assignment: np.ndarray  # (C, B)
    achieved_size: int
    total_loss: float
    per_point_loss: float
    n_kept: int
    container: bytes
    best_effort: bool
    trace: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    status: Optional[Status] = None
    prepared: Optional[PreparedModel] = field(default=None, repr=False)

    def relative_error(self, budget: int) -> float:
        return abs(self.achieved_size - budget) / budget


@dataclass
class _Candidate:
    tau: float
    bits: np.ndarray
    size: int
    loss: float
    per_point: float
    container: bytes
    prepared: PreparedModel
    status: Status


def _within(size, budget, tol):
    return abs(size - budget) / budget < tol


def _search_tau(model, scores, tau, cfg, trace, t0, force=False):
    """Run the inner loop at one reserve ratio.

    Returns ``("skip", None)``, ``("infeasible", cand_or_None)``,
    ``("converged", cand)`` or ``("missed", closest_cand)``.
    """
    prep = prepare(model, tau, cfg.blocks, cfg.coord_bits, scores)
    C, B = prep.partition.channels, prep.partition.blocks
    P = prep.partition.element_counts()
    bits = np.full((C, B), min(8, cfg.q_max), dtype=np.int64)
    fixed, stream = prep.encode_parts(bits, cfg.norm)
    s_a = measure_fixed_cost(fixed) + len(stream)
    if 2 * s_a < cfg.budget and not force:
        log.info("tau=%.3f skipped: 2 x %d < %d", tau, s_a, cfg.budget)
        return "skip", None

    est = SizeEstimate(P, measure_fixed_cost(fixed), cfg.budget)
    loss = prep.loss_tensor(cfg.norm, cfg.q_max)
    closest = None
    seen = set()
    for it in range(1, cfg.max_inner_iters + 1):
        est = calibrate(est, s_a, bits)
        pay_budget = est.payload_budget_bits()
        res = solve_hierarchical(loss, P, pay_budget, warm_start=bits, time_limit=cfg.time_limit,
                                 threads=cfg.threads)
        if res.status is Status.INFEASIBLE:
            log.info("tau=%.3f infeasible: payload budget %d below floor %d", tau, pay_budget, int(P.sum()))
            return "infeasible", closest
        bits = res.assignment
        buf = prep.encode(bits, cfg.norm)
        s_a = len(buf)
        trace.append(TraceRow(tau, it, s_a, cfg.budget, est.delta, res.objective,
                              round((time.monotonic() - t0) * 1000, 3)))
        cand = _Candidate(tau, bits, s_a, res.objective, res.objective / prep.n_kept, buf, prep, res.status)
        if closest is None or abs(s_a - cfg.budget) < abs(closest.size - cfg.budget):
            closest = cand
        if _within(s_a, cfg.budget, cfg.tolerance):
            return "converged", cand
        key = bits.tobytes()
        if key in seen:
            break
        seen.add(key)
    return "missed", closest


def run_search(model: GaussianModel, config: SearchConfig) -> SearchOutcome:
    """Pick the reserve ratio and bit assignment with the least per-point loss that meets the budget."""
    cfg = config
    scores = importance_scores(model)
    t0 = time.monotonic()
    trace, skipped = [], []
    converged, fallbacks = [], []
    for tau in cfg.tau_grid:
        what, cand = _search_tau(model, scores, tau, cfg, trace, t0)
        if what == "skip":
            skipped.append(tau)
            continue
        if what == "converged":
            converged.append(cand)
        elif cand is not None:
            fallbacks.append(cand)

    if len(skipped) == len(cfg.tau_grid):
        # even the largest ratio leaves room at 16 bits; spend what we can there
        what, cand = _search_tau(model, scores, cfg.tau_grid[-1], cfg, trace, t0, force=True)
        (converged if what == "converged" else fallbacks).append(cand)

    if converged:
        best = min(converged, key=lambda c: (c.per_point, c.tau))
        best_effort = False
    elif fallbacks:
        best = min(fallbacks, key=lambda c: (abs(c.size - cfg.budget), c.tau))
        best_effort = True
    else:
        raise InfeasibleError(f"budget {cfg.budget} bytes is below the 1-bit floor at every tau in {cfg.tau_grid}")
    return SearchOutcome(
        tau_star=best.tau,
        assignment=best.bits,
        achieved_size=best.size,
        total_loss=best.loss,
        per_point_loss=best.per_point,
        n_kept=best.prepared.n_kept,
        container=best.container,
        best_effort=best_effort,
        trace=trace,
        skipped=skipped,
        status=best.status,
        prepared=best.prepared,
    )


def trace_csv(outcome: SearchOutcome) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRACE_FIELDS)
    for r in outcome.trace:
        w.writerow([repr(r.tau), r.iter, r.S_a, r.S_T, r.S_delta, repr(float(r.objective)), repr(r.elapsed_ms)])
    return out.getvalue()


def emit_trace(outcome: SearchOutcome, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(trace_csv(outcome))


def read_trace(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [TraceRow(float(r["tau"]), int(r["iter"]), int(r["S_a"]), int(r["S_T"]), int(r["S_delta"]),
                     float(r["objective"]), float(r["elapsed_ms"])) for r in rows]
