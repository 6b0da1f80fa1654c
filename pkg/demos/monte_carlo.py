# %% [markdown]
# # A small consistency study
#
# RMSE of the estimates should fall as either the grid or the horizon grows.
# This runs the quick preset on the stationary design (a few seconds).

# %%
from compostar.montecarlo import STATIONARY_PARAMS, McConfig, run_study, summarize

cfg = McConfig.from_preset("quick", params=STATIONARY_PARAMS, workers=1)
res = run_study(cfg)
table = summarize(res)

# %%
avg = table[table.param == "average"]
print(avg.pivot_table(index=["side", "T"], columns="param_group", values="rmse").round(4))
print(f"excluded fits: {res.exclusion_rate():.1%}, wall time {res.wall_time:.1f} s")

# %% [markdown]
# The reference design explodes on a rook grid, so its fits are excluded and
# counted rather than silently averaged.

# %%
bad = run_study(McConfig(grid_sides=(4,), horizons=(20,), replications=3, workers=1))
print("reference design exclusion rate:", bad.exclusion_rate())
print(bad.cells[0].errors[0][:120])
