# %% [markdown]
# # Pruning and Morton ordering
#
# Points are ranked by a proxy importance (opacity times projected scale), the top
# fraction is kept, coordinates snap to a 16-bit grid and the survivors are sorted
# along a Morton curve so that neighbouring points land in the same block.

# %%
import numpy as np

from gsbudget.importance import importance_scores, prune, survivor_count
from gsbudget.model import morton_sort, quantize_coordinates
from gsbudget.synth import synthetic_model

model = synthetic_model(20_000, channels=10, seed=1)
scores = importance_scores(model)
print("points:", model.n_points, "channels:", model.n_channels)
print("score quartiles:", np.round(np.quantile(scores, [0.25, 0.5, 0.75]), 5))

# %%
for tau in (0.3, 0.6, 1.0):
    kept = prune(model, scores, tau)
    print(f"tau={tau:.1f}  kept {kept.n_points} (expected {survivor_count(model.n_points, tau)})")

# %% [markdown]
# Morton order keeps spatial neighbours close in memory.  A quick check: the mean
# distance between consecutive points drops sharply after sorting.

# %%
kept = prune(model, scores, 0.6)
grid, origin, step = quantize_coordinates(kept, 16)
order = morton_sort(grid).permutation
pos = kept.positions
print("mean hop, input order :", np.linalg.norm(np.diff(pos, axis=0), axis=1).mean().round(3))
print("mean hop, Morton order:", np.linalg.norm(np.diff(pos[order], axis=0), axis=1).mean().round(3))
