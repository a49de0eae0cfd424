# %% [markdown]
# # Per-group affine quantization and the loss tensor
#
# Each channel is cut into B contiguous blocks.  Every block gets its own
# min/scale/zero-point at a chosen bit-width, and the loss tensor records the
# reconstruction error of every block at every bit-width from 1 to 16.

# %%
import numpy as np

from gsbudget.pipeline import prepare
from gsbudget.quantizer import dequantize_group, quantize_group
from gsbudget.synth import synthetic_model

rng = np.random.default_rng(0)
x = rng.normal(size=1000)
for b in (2, 4, 8):
    sym, params = quantize_group(x, b)
    err = np.abs(dequantize_group(sym, params) - x).max()
    print(f"{b:2d} bits  max error {err:.5f}  scale {params.scale:.5f}  (error <= scale: {err <= params.scale})")

# %%
prep = prepare(synthetic_model(15_000, 10, seed=2), tau=0.7, blocks=30)
omega = prep.loss_tensor("l2").omega
print("loss tensor shape (C, B, Q):", omega.shape)
print("channel 0, block 0, first six bit-widths:", np.round(omega[0, 0, :6], 4))
print("non-increasing in bits everywhere:", bool((np.diff(omega, axis=2) <= 1e-12).all()))

# %% [markdown]
# The three norms weigh errors differently; L-infinity only looks at the worst element.

# %%
for norm in ("l1", "l2", "linf"):
    om = prep.loss_tensor(norm).omega
    print(f"{norm:>4}: total loss at 4 bits {om[:, :, 3].sum():.3f}, at 8 bits {om[:, :, 7].sum():.5f}")
