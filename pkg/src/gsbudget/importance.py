"""Per-point importance and reserve-ratio pruning."""
from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from .errors import InvalidBudgetError, InvalidInputError, SchemaError
from .model import Activation, GaussianModel, take_points

OPACITY_NAMES = ("opacity", "o")
SCALE_NAMES = ("scale", "scaling", "s")

_ACTIVATIONS = {
    Activation.IDENTITY: lambda v: v,
    Activation.SIGMOID: expit,
    Activation.EXP: np.exp,
}


def _find_group(model, candidates, what):
    for name in candidates:
        try:
            return model.group(name)
        except KeyError:
            continue
    raise SchemaError(
        f"no {what} channel (looked for {list(candidates)}); supply an external "
        "'importance' column with view-aggregated scores instead"
    )


def proxy_importance(model: GaussianModel, opacity: str = None, scale: str = None) -> np.ndarray:
    """Opacity times volume, evaluated through each group's activation.

    Stands in for the rendering-based score when no external importance
    column is available.
    """
    og = model.group(opacity) if opacity else _find_group(model, OPACITY_NAMES, "opacity")
    sg = model.group(scale) if scale else _find_group(model, SCALE_NAMES, "scale")
    op = _ACTIVATIONS[og.activation](model.attributes[model.channel_slice(og.name)][0])
    sc = model.attributes[model.channel_slice(sg.name)]
    if sg.activation is Activation.EXP:
        # product of exps as one exp of the sum; capped to stay finite
        vol = np.exp(np.minimum(sc.sum(axis=0), 700.0))
    else:
        vol = np.prod(_ACTIVATIONS[sg.activation](sc), axis=0)
    score = np.maximum(op * vol, 0.0)
    return np.nan_to_num(score, nan=0.0, posinf=np.finfo(np.float64).max)


def importance_scores(model: GaussianModel) -> np.ndarray:
    """External ``importance`` column when present, otherwise the proxy."""
    if model.importance is not None:
        return model.importance
    return proxy_importance(model)


def survivor_count(n: int, tau: float) -> int:
    # round first so that e.g. 0.3 * 10 does not ceil to 4
    return math.ceil(round(tau * n, 9))


def select_survivors(scores, tau: float) -> np.ndarray:
    """Indices (ascending) of the ``ceil(tau * N)`` highest scores; ties keep lower indices."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0.0 <= tau <= 1.0:
        raise InvalidBudgetError(f"reserve ratio must lie in [0, 1], got {tau}")
    n = len(scores)
    k = survivor_count(n, tau)
    if k == 0:
        raise InvalidBudgetError(f"reserve ratio {tau} keeps no points out of {n}")
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def prune(model: GaussianModel, scores, tau: float) -> GaussianModel:
    scores = np.asarray(scores)
    if scores.shape != (model.n_points,):
        raise InvalidInputError(f"scores have shape {scores.shape}, model has {model.n_points} points")
    if tau == 1.0:
        return model
    return take_points(model, select_survivors(scores, tau))
