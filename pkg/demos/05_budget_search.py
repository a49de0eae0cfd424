# %% [markdown]
# # Hitting a byte budget
#
# The search tries a grid of reserve ratios.  At each one it calibrates the size
# model, solves the allocation, re-encodes and repeats until the real container is
# within tolerance of the budget.  The winner has the lowest loss per kept point.

# %%
from gsbudget.search import SearchConfig, run_search, trace_csv
from gsbudget.synth import synthetic_model

model = synthetic_model(30_000, 10, seed=5)
for budget in (120_000, 250_000, 500_000):
    out = run_search(model, SearchConfig(budget=budget))
    print(f"budget {budget:7d}: size {out.achieved_size:7d} ({100 * out.relative_error(budget):.2f}% off), "
          f"tau* {out.tau_star}, skipped {out.skipped}, best effort {out.best_effort}")

# %%
print(trace_csv(out))
