# %% [markdown]
# # Bit allocation as a multiple-choice knapsack
#
# Every group picks exactly one bit-width; the total payload must stay under the
# budget and the summed loss should be as small as possible.  The exact solver is
# compared with a marginal-gain greedy and with the two-level hierarchical solver
# used by the search.

# %%
import time

import numpy as np

from gsbudget.mckp import MckpInstance, solve_baseline_greedy, solve_exact, solve_hierarchical

rng = np.random.default_rng(4)
G, Q = 40, 8
sizes = rng.integers(5, 60, size=G)
decay = rng.uniform(0.3, 0.9, size=(G, 1)) ** np.arange(1, Q + 1)
losses = sizes[:, None] * decay
inst = MckpInstance(sizes, losses, budget=int(sizes.sum() * 4))

for name, solve in (("exact", solve_exact), ("greedy", solve_baseline_greedy)):
    t = time.perf_counter()
    r = solve(inst)
    print(f"{name:7s} loss {r.objective:9.4f}  bits {r.payload_bits}/{inst.budget}  "
          f"{r.status.value}  {1e3 * (time.perf_counter() - t):.1f} ms")

# %% [markdown]
# The hierarchical solver first splits the budget across channels and then solves
# each channel on its own.  It takes a (C, B, Q) loss tensor and (C, B) sizes.

# %%
loss = losses.reshape(4, 10, Q)
r = solve_hierarchical(loss, sizes.reshape(4, 10), inst.budget)
print("hierarchical loss", round(r.objective, 4), r.status.value)
print(r.assignment)
