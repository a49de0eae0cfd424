"""Multiple-choice knapsack solvers for per-group bit-width selection.

Every group ``g`` picks exactly one bit-width ``q`` in ``1..Q``; option ``q``
weighs ``sizes[g] * q`` payload bits and costs ``losses[g, q - 1]``.  The goal
is the minimum total loss with total weight within ``budget``.

Three solvers are provided:

* :func:`solve_exact` - provably optimal.  Uses a weight-indexed dynamic
  program when the gcd-scaled table fits under ``cell_cap``, otherwise a
  layered search over non-dominated partial assignments pruned by
  linear-relaxation lower bounds (the LP relaxation of a multiple-choice
  knapsack is solved greedily on each group's lower convex hull).
* :func:`solve_baseline_greedy` - best loss-per-bit upgrades, no guarantee.
* :func:`solve_hierarchical` - channel-level problem first, then one
  block-level problem per channel under a proportional share of the budget.
"""
from __future__ import annotations

import enum
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .errors import InstanceTooLargeError, InvalidInputError, MalformedInputError

DEFAULT_CELL_CAP = 10**6
DEFAULT_TIME_LIMIT = 50.0
DEFAULT_MAX_STATES = 1_000_000


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE_HEURISTIC = "feasible_heuristic"
    INFEASIBLE = "infeasible"
    TIME_LIMIT = "time_limit"


@dataclass
class MckpInstance:
    sizes: np.ndarray  # (G,) elements per group
    losses: np.ndarray  # (G, Q); column q - 1 is the loss at q bits
    budget: int  # payload bits
    warm_start: Optional[np.ndarray] = None  # (G,) bit-widths

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=np.int64).ravel()
        self.losses = np.asarray(self.losses, dtype=np.float64)
        if self.losses.ndim != 2 or self.losses.shape[0] != self.sizes.shape[0]:
            raise InvalidInputError(f"losses shape {self.losses.shape} does not match {len(self.sizes)} groups")
        if self.losses.shape[1] < 1 or len(self.sizes) < 1:
            raise InvalidInputError("need at least one group and one option")
        if (self.sizes < 1).any():
            raise InvalidInputError("group sizes must be positive")
        if not np.isfinite(self.losses).all():
            raise InvalidInputError("losses must be finite")
        self.budget = int(self.budget)
        if self.warm_start is not None:
            ws = np.asarray(self.warm_start, dtype=np.int64).ravel()
            if ws.shape != self.sizes.shape or ws.min() < 1 or ws.max() > self.q_max:
                raise InvalidInputError("warm start must give one bit-width in [1, Q] per group")
            self.warm_start = ws

    @property
    def n_groups(self) -> int:
        return len(self.sizes)

    @property
    def q_max(self) -> int:
        return self.losses.shape[1]

    def weights(self) -> np.ndarray:
        return self.sizes[:, None] * np.arange(1, self.q_max + 1, dtype=np.int64)[None, :]

    def floor_bits(self) -> int:
        return int(self.sizes.sum())

    def evaluate(self, bits):
        bits = np.asarray(bits, dtype=np.int64)
        obj = float(self.losses[np.arange(self.n_groups), bits - 1].sum())
        return obj, int((self.sizes * bits).sum())


@dataclass
class SolverResult:
    assignment: np.ndarray
    objective: float
    payload_bits: int
    status: Status
    stats: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status is not Status.INFEASIBLE


def _result(inst, bits, status, **stats):
    bits = np.asarray(bits, dtype=np.int64)
    obj, pay = inst.evaluate(bits)
    return SolverResult(bits, obj, pay, status, stats)


def _infeasible(inst):
    return _result(inst, np.ones(inst.n_groups, dtype=np.int64), Status.INFEASIBLE)


# greedy ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _greedy(sizes, losses, budget):
    G, Q = losses.shape
    bits = np.ones(G, dtype=np.int64)
    rem = budget
    for g in range(G):
        rem -= sizes[g]
    while True:
        best = 0.0
        bg = -1
        bq = -1
        for g in range(G):
            cur = bits[g]
            for q in range(cur + 1, Q + 1):
                dw = sizes[g] * (q - cur)
                if dw > rem:
                    break
                dl = losses[g, cur - 1] - losses[g, q - 1]
                if dl <= 0.0:
                    continue
                r = dl / dw
                if r > best:
                    best = r
                    bg = g
                    bq = q
        if bg < 0:
            break
        rem -= sizes[bg] * (bq - bits[bg])
        bits[bg] = bq
    return bits


def solve_baseline_greedy(instance: MckpInstance) -> SolverResult:
    """Start at 1 bit everywhere and apply the best loss-per-bit upgrade that fits."""
    if instance.floor_bits() > instance.budget:
        return _infeasible(instance)
    bits = _greedy(instance.sizes, instance.losses, instance.budget)
    return _result(instance, bits, Status.FEASIBLE_HEURISTIC, method="greedy")


# weight-indexed dynamic program --------------------------------------------------

def _dp_cells(inst):
    g = math.gcd(*inst.sizes.tolist()) if inst.n_groups > 1 else int(inst.sizes[0])
    cap = min(inst.budget, int(inst.sizes.sum()) * inst.q_max) // g
    return g, cap, inst.n_groups * (cap + 1)


def _solve_dp(inst, unit, cap):
    G, Q = inst.losses.shape
    w = (inst.weights() // unit).astype(np.int64)
    f = np.zeros(cap + 1)
    choice = np.empty((G, cap + 1), dtype=np.int8)
    for g in range(G):
        new = np.full(cap + 1, np.inf)
        ch = np.zeros(cap + 1, dtype=np.int8)
        for q in range(Q):
            wq = w[g, q]
            if wq > cap:
                break
            cand = f[: cap + 1 - wq] + inst.losses[g, q]
            better = cand < new[wq:]
            new[wq:][better] = cand[better]
            ch[wq:][better] = q
        f = new
        choice[g] = ch
    c = cap
    bits = np.empty(G, dtype=np.int64)
    for g in range(G - 1, -1, -1):
        q = int(choice[g, c])
        bits[g] = q + 1
        c -= w[g, q]
    return bits


# bounded search over non-dominated partial assignments ---------------------------

def _hull_segments(weights, losses):
    """Lower convex hull of one group's (weight, loss) options, as (dw, dl) steps.

    Starts at the lightest option and stops at the first minimum-loss option.
    """
    stop = int(np.argmin(losses))
    hull = [0]
    for k in range(1, stop + 1):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (weights[b] - weights[a]) * (losses[k] - losses[a]) - (losses[b] - losses[a]) * (weights[k] - weights[a])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(k)
    # drop non-improving leading steps (losses must strictly fall along the chain)
    segs = []
    for a, b in zip(hull[:-1], hull[1:]):
        dl = losses[b] - losses[a]
        if dl < 0:
            segs.append((weights[b] - weights[a], dl))
    return segs


class _SuffixBounds:
    """Lower bounds on the best loss of groups ``g..G-1`` given their spare capacity."""

    def __init__(self, inst, stride):
        G = inst.n_groups
        w = inst.weights()
        self.stride = stride
        self.base = np.zeros(G + 1)
        self.min_loss = np.zeros(G + 1)
        segs = [_hull_segments(w[g], inst.losses[g]) for g in range(G)]
        for g in range(G - 1, -1, -1):
            self.base[g] = self.base[g + 1] + inst.losses[g, 0]
            self.min_loss[g] = self.min_loss[g + 1] + inst.losses[g].min()
        self.tables = {}
        for g in list(range(0, G, stride)) + [G]:
            dw = np.array([s[0] for k in range(g, G) for s in segs[k]], dtype=np.float64)
            dl = np.array([s[1] for k in range(g, G) for s in segs[k]], dtype=np.float64)
            order = np.argsort(dl / np.maximum(dw, 1e-300), kind="stable") if len(dw) else np.zeros(0, dtype=np.int64)
            dw, dl = dw[order], dl[order]
            self.tables[g] = (np.concatenate([[0.0], np.cumsum(dw)]), np.concatenate([[0.0], np.cumsum(dl)]),
                              np.concatenate([dl / np.maximum(dw, 1e-300), [0.0]]))

    def __call__(self, g, spare):
        """``spare`` is capacity beyond the 1-bit weights of groups ``g..``."""
        k = -(-g // self.stride) * self.stride
        k = min(k, len(self.base) - 1)
        gap = self.min_loss[g] - self.min_loss[k]
        cw, cl, slope = self.tables[k]
        idx = np.searchsorted(cw, spare, side="right") - 1
        idx = np.clip(idx, 0, len(cw) - 1)
        lb = self.base[k] + cl[idx] + (spare - cw[idx]) * slope[idx]
        return gap + lb


def _bounded_search(inst, incumbent, deadline, max_states):
    G, Q = inst.losses.shape
    w = inst.weights()
    budget = inst.budget
    minw = np.concatenate([np.cumsum(inst.sizes[::-1])[::-1], [0]])
    stride = max(1, (G * G * Q) // 4_000_000 + 1)
    bounds = _SuffixBounds(inst, stride)
    inc_obj = incumbent.objective
    tol = 1e-9 * max(1.0, abs(inc_obj))

    W = np.zeros(1, dtype=np.int64)
    L = np.zeros(1)
    parents, options = [], []
    truncated = False
    for g in range(G):
        if deadline is not None and time.monotonic() > deadline:
            return None, "time_limit"
        Wc = (W[:, None] + w[g][None, :]).ravel()
        Lc = (L[:, None] + inst.losses[g][None, :]).ravel()
        par = np.repeat(np.arange(len(W)), Q)
        opt = np.tile(np.arange(Q, dtype=np.int8), len(W))
        spare = budget - Wc - minw[g + 1]
        keep = spare >= 0
        lb = Lc + bounds(g + 1, np.where(keep, spare, 0))
        keep &= lb <= inc_obj + tol
        Wc, Lc, par, opt, lb = Wc[keep], Lc[keep], par[keep], opt[keep], lb[keep]
        if len(Wc) == 0:
            return None, "pruned"
        order = np.lexsort((Lc, Wc))
        Wc, Lc, par, opt, lb = Wc[order], Lc[order], par[order], opt[order], lb[order]
        run_min = np.minimum.accumulate(Lc)
        nd = np.ones(len(Lc), dtype=bool)
        nd[1:] = Lc[1:] < run_min[:-1]
        Wc, Lc, par, opt, lb = Wc[nd], Lc[nd], par[nd], opt[nd], lb[nd]
        if len(Wc) > max_states:
            truncated = True
            sel = np.sort(np.argsort(lb, kind="stable")[:max_states])
            Wc, Lc, par, opt = Wc[sel], Lc[sel], par[sel], opt[sel]
        W, L = Wc, Lc
        parents.append(par)
        options.append(opt)
    best = int(np.argmin(L))
    bits = np.empty(G, dtype=np.int64)
    s = best
    for g in range(G - 1, -1, -1):
        bits[g] = int(options[g][s]) + 1
        s = parents[g][s]
    return bits, ("truncated" if truncated else "complete")


def solve_exact(instance: MckpInstance, cell_cap: int = DEFAULT_CELL_CAP, time_limit: Optional[float] = None,
                fallback: bool = True, max_states: int = DEFAULT_MAX_STATES, method: str = "auto") -> SolverResult:
    """Optimal assignment (status ``optimal``) unless a time or state limit intervenes.

    ``method`` forces ``"dp"`` or ``"search"``; with ``fallback=False`` an
    instance whose DP table exceeds ``cell_cap`` is refused.
    """
    inst = instance
    if inst.floor_bits() > inst.budget:
        return _infeasible(inst)
    t0 = time.monotonic()
    unit, cap, cells = _dp_cells(inst)
    if method == "dp" or (method == "auto" and cells <= cell_cap):
        if cells > cell_cap and method != "dp":
            raise InstanceTooLargeError(f"{cells} DP cells exceed cap {cell_cap}")
        bits = _solve_dp(inst, unit, cap)
        return _result(inst, bits, Status.OPTIMAL, method="dp", cells=cells, seconds=time.monotonic() - t0)
    if method == "auto" and not fallback:
        raise InstanceTooLargeError(f"{cells} DP cells exceed cap {cell_cap}; use the hierarchical solver")

    incumbent = solve_baseline_greedy(inst)
    if inst.warm_start is not None:
        ws = _result(inst, inst.warm_start, Status.FEASIBLE_HEURISTIC)
        if ws.payload_bits <= inst.budget and ws.objective < incumbent.objective:
            incumbent = ws
    deadline = None if time_limit is None else t0 + time_limit
    bits, how = _bounded_search(inst, incumbent, deadline, max_states)
    stats = dict(method="search", seconds=time.monotonic() - t0, outcome=how)
    if bits is None:
        if how == "time_limit":
            return _result(inst, incumbent.assignment, Status.TIME_LIMIT, **stats)
        # every branch was bounded out by the incumbent, which is therefore optimal
        return _result(inst, incumbent.assignment, Status.OPTIMAL, **stats)
    cand = _result(inst, bits, Status.OPTIMAL, **stats)
    if cand.objective > incumbent.objective:
        cand = _result(inst, incumbent.assignment, Status.OPTIMAL, **stats)
    if how == "truncated":
        cand.status = Status.FEASIBLE_HEURISTIC
    return cand


# hierarchical -----------------------------------------------------------------------

def channel_budgets(budget: int, channel_bits, channel_sizes=None) -> np.ndarray:
    """Split ``budget`` across channels in proportion to their channel-level payload.

    With equal channel sizes this is ``floor(budget * q_c / sum(q))``.  Weighting
    by ``q_c * size_c`` keeps every share at or above the channel's own payload
    whenever the channel-level assignment fits the budget.
    """
    qc = np.asarray(channel_bits, dtype=np.int64)
    w = qc if channel_sizes is None else qc * np.asarray(channel_sizes, dtype=np.int64)
    total = int(w.sum())
    return np.array([budget * int(x) // total for x in w], dtype=np.int64)


_STATUS_RANK = {Status.OPTIMAL: 0, Status.FEASIBLE_HEURISTIC: 1, Status.TIME_LIMIT: 2}


def solve_hierarchical(loss, sizes, budget: int, warm_start=None, time_limit: float = DEFAULT_TIME_LIMIT,
                       cell_cap: int = DEFAULT_CELL_CAP, threads: int = 1) -> SolverResult:
    """Two-level solve over a (C, B, Q) loss tensor and (C, B) group sizes."""
    omega = np.asarray(getattr(loss, "omega", loss), dtype=np.float64)
    C, B, Q = omega.shape
    sizes = np.broadcast_to(np.asarray(sizes, dtype=np.int64), (C, B))
    if time_limit is not None and time_limit <= 0:
        raise InvalidInputError("time limit must be positive")
    t0 = time.monotonic()
    deadline = None if time_limit is None else t0 + time_limit
    flat = MckpInstance(sizes.ravel(), omega.reshape(C * B, Q), budget)
    if flat.floor_bits() > budget:
        r = _infeasible(flat)
        r.assignment = r.assignment.reshape(C, B)
        return r

    def remaining():
        return None if deadline is None else max(1e-3, deadline - time.monotonic())

    ch_sizes = sizes.sum(axis=1)
    ch_warm = None
    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=np.int64).reshape(C, B)
        ch_warm = np.clip((ws * sizes).sum(axis=1) // ch_sizes, 1, Q)
    top = solve_exact(MckpInstance(ch_sizes, omega.sum(axis=1), budget, ch_warm), cell_cap, remaining())
    qc = top.assignment
    budgets = channel_budgets(budget, qc, ch_sizes)

    def solve_channel(i):
        ws = None if warm_start is None else np.asarray(warm_start, dtype=np.int64).reshape(C, B)[i]
        if ws is not None and int((ws * sizes[i]).sum()) > budgets[i]:
            ws = None
        return solve_exact(MckpInstance(sizes[i], omega[i], int(budgets[i]), ws), cell_cap, remaining())

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            subs = list(pool.map(solve_channel, range(C)))
    else:
        subs = [solve_channel(i) for i in range(C)]

    bits = np.stack([r.assignment for r in subs])
    statuses = [top.status] + [r.status for r in subs]
    worst = max(statuses, key=lambda s: _STATUS_RANK[s])
    if worst is Status.OPTIMAL and C > 1:
        worst = Status.FEASIBLE_HEURISTIC
    obj = float(omega[np.arange(C)[:, None], np.arange(B)[None, :], bits - 1].sum())
    pay = int((sizes * bits).sum())
    return SolverResult(bits, obj, pay, worst, dict(
        method="hierarchical", channel_bits=qc, channel_budgets=budgets, seconds=time.monotonic() - t0,
    ))


# instance text format -------------------------------------------------------------

def dump_instance(instance: MckpInstance, path) -> None:
    """``budget <bits>`` then one ``size loss_1 ... loss_Q`` line per group."""
    lines = ["# mckp instance v1", f"budget {instance.budget}"]
    if instance.warm_start is not None:
        lines.append("warm " + " ".join(str(int(b)) for b in instance.warm_start))
    for s, row in zip(instance.sizes, instance.losses):
        lines.append(f"{int(s)} " + " ".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_instance(path) -> MckpInstance:
    budget, warm, sizes, losses = None, None, [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "budget":
                    budget = int(parts[1])
                elif parts[0] == "warm":
                    warm = [int(p) for p in parts[1:]]
                else:
                    sizes.append(int(parts[0]))
                    losses.append([float(p) for p in parts[1:]])
            except (ValueError, IndexError) as exc:
                raise MalformedInputError(f"{path}:{lineno}: {exc}") from exc
    if budget is None or not sizes:
        raise MalformedInputError(f"{path}: missing budget or groups")
    if len({len(r) for r in losses}) != 1:
        raise MalformedInputError(f"{path}: groups have differing option counts")
    return MckpInstance(np.array(sizes), np.array(losses), budget, warm)
