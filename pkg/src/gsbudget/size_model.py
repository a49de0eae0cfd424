"""Linear container-size estimate in the bit assignment, with a scalar calibration term.

``estimate(Q) = ceil(sum(P * Q) / 8) + fixed_cost + delta`` where ``P`` holds
per-group element counts, so ``sum(P * Q)`` is exactly the bit-packed payload
before entropy coding.  ``fixed_cost`` is measured by serializing everything
except the attribute payload, and ``delta`` absorbs the entropy-coding gain.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class SizeEstimate:
    element_counts: np.ndarray  # (C, B)
    fixed_cost: int
    budget: int
    delta: int = 0

    def __post_init__(self):
        if self.budget <= 0:
            raise InvalidInputError(f"budget must be positive, got {self.budget}")
        if self.fixed_cost < 0:
            raise InvalidInputError("fixed cost cannot be negative")

    def payload_bits(self, bits) -> int:
        bits = np.asarray(bits, dtype=np.int64)
        if bits.shape != self.element_counts.shape:
            raise InvalidInputError(f"bit assignment shape {bits.shape} != {self.element_counts.shape}")
        return int((self.element_counts * bits).sum())

    def payload_budget_bits(self) -> int:
        """Payload bits the solver may spend so that the estimate stays within budget."""
        return 8 * (self.budget - self.fixed_cost - self.delta)


def measure_fixed_cost(parts) -> int:
    """Exact byte length of already-serialized fixed parts."""
    if isinstance(parts, (bytes, bytearray)):
        return len(parts)
    return sum(len(p) for p in parts)


def estimate_size(est: SizeEstimate, bits) -> int:
    return -(-est.payload_bits(bits) // 8) + est.fixed_cost + est.delta


def calibrate(est: SizeEstimate, actual: int, bits) -> SizeEstimate:
    """Set ``delta`` to the residual between a measured size and the uncalibrated estimate.

    ``bits`` is the assignment the measurement was taken at.  Calibrating
    twice with the same measurement gives the same estimate.
    """
    base = estimate_size(replace(est, delta=0), bits)
    return replace(est, delta=int(actual) - base)
