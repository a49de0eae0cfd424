# %% [markdown]
# # Predicting the container size
#
# The payload is sum(P * Q) bits.  Everything else (header, schema, geometry,
# metadata, framing) is measured once, and a residual term learned from one real
# encode soaks up what the entropy coder gains or loses.

# %%
import numpy as np

from gsbudget.pipeline import prepare
from gsbudget.size_model import SizeEstimate, calibrate, estimate_size, measure_fixed_cost
from gsbudget.synth import synthetic_model

prep = prepare(synthetic_model(20_000, 10, seed=3), tau=0.8, blocks=30)
P = prep.partition.element_counts()
C, B = P.shape
q8 = np.full((C, B), 8)
fixed, stream = prep.encode_parts(q8)
est = SizeEstimate(P, measure_fixed_cost(fixed), budget=150_000)
print("fixed bytes:", est.fixed_cost, " payload bytes at 8 bits:", est.payload_bits(q8) // 8)

# %%
actual = len(prep.encode(q8))
est = calibrate(est, actual, q8)
print("actual", actual, "calibrated estimate", estimate_size(est, q8), "residual", est.delta)

rng = np.random.default_rng(0)
for _ in range(3):
    bits = np.clip(q8 + rng.integers(-2, 3, size=(C, B)), 1, 16)
    print(f"estimate {estimate_size(est, bits):7d}   actual {len(prep.encode(bits)):7d}")
