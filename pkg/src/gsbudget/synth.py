"""Seeded synthetic splat models for tests, demos and the acceptance harness.

Positions come from a mixture of anisotropic clusters.  Attribute channels
are smooth functions of position plus noise, with per-channel amplitudes and
tails chosen so that channels differ in how much precision they need.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .model import Activation, ChannelSchema, GaussianModel


def synthetic_schema(channels: int) -> tuple:
    if channels < 4:
        raise InvalidInputError("synthetic models need at least 4 channels (opacity + 3 scales)")
    schema = [ChannelSchema("opacity", 1, Activation.SIGMOID), ChannelSchema("scale", 3, Activation.EXP)]
    if channels > 4:
        schema.append(ChannelSchema("f", channels - 4, Activation.IDENTITY))
    return tuple(schema)


def synthetic_model(n_points: int, channels: int = 10, seed: int = 0, clusters: int = 12) -> GaussianModel:
    if n_points < 1:
        raise InvalidInputError("need at least one point")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-10, 10, size=(clusters, 3))
    spreads = rng.uniform(0.3, 2.5, size=(clusters, 3))
    label = rng.integers(0, clusters, size=n_points)
    pos = centers[label] + rng.normal(size=(n_points, 3)) * spreads[label]

    attrs = np.empty((channels, n_points))
    # opacity logits: a confident majority and a faint tail
    faint = rng.random(n_points) < 0.3
    attrs[0] = np.where(faint, rng.normal(-4.0, 1.5, n_points), rng.normal(2.5, 1.0, n_points))
    # log-scales: cluster dependent size plus jitter
    base = np.log(spreads[label].mean(axis=1) * 0.05)
    attrs[1:4] = base + rng.normal(0, 0.4, size=(3, n_points))

    for k in range(4, channels):
        amp = rng.uniform(0.2, 2.0) * 0.8 ** (k - 4)
        freq = rng.normal(size=3) * rng.uniform(0.05, 0.6)
        phase = rng.uniform(0, 2 * np.pi)
        smooth = amp * np.sin(pos @ freq + phase) + 0.3 * amp * np.cos(0.5 * label + k)
        if k % 3 == 0:
            noise = rng.laplace(0, 0.05 * amp, n_points)
        else:
            noise = rng.normal(0, 0.03 * amp, n_points)
        attrs[k] = smooth + noise
    return GaussianModel(pos, attrs, synthetic_schema(channels))
