# %% [markdown]
# # Figures and tables
#
# Each experiment writes CSV files and a report into `results/<name>/`.
# Path counts are reduced here for speed; raise `paths` to 10000 for the
# full runs (equivalent to `python3 -m stochbt experiment <name>`).

# %%
from dataclasses import replace

from stochbt.experiments import ExperimentConfig, run_experiment

cfg = ExperimentConfig(paths=2000, steps=1000, seed=0)

# %% [markdown]
# ## Hankel singular value decay

# %%
tables, extra = run_experiment("fig1", cfg, "results/fig1")
for idx, s, _ in tables["fig1.csv"][1][:12]:
    print(f"{idx:2d} {s:.3e}")

# %% [markdown]
# ## Exact, sampled and approximate Gramians

# %%
tables, _ = run_experiment("table1", cfg, "results/table1")
header, rows = tables["table1.csv"]
for row in rows:
    print(f"{row[0]:8s} r={row[3]:2d} bound={row[4]:.3e} mc={row[5]:.3e}")

# %% [markdown]
# ## Time horizon and noise correlation

# %%
for name in ("table3", "table4"):
    tables, _ = run_experiment(name, replace(cfg, orders=(8, 16)), f"results/{name}")
    for row in tables[f"{name}.csv"][1]:
        print(f"{name} T={row[1]:.1f} rho={row[2]:.1f} r={row[3]:2d} bound={row[4]:.3e} mc={row[5]:.3e}")
