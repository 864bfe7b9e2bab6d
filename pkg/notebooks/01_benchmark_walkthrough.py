# %% [markdown]
# # Heat-equation benchmark walkthrough
#
# Build the stochastic heat-equation benchmark, compute exact Gramians,
# balance, truncate and compare the error bound with Monte Carlo errors.
# Run with `python3 notebooks/01_benchmark_walkthrough.py` or open it as a
# percent-format notebook.

# %%
import numpy as np

from stochbt import (
    BenchmarkConfig,
    aposteriori_bound,
    balanced_transform,
    benchmark_control,
    build_heat_spde_benchmark,
    exact_gramians,
    simulate_errors,
    truncate,
)

# %%
sys = build_heat_spde_benchmark(BenchmarkConfig(n=100, T=1.0))
eig = np.linalg.eigvals(sys.A).real
print(f"n={sys.n} m={sys.m} p={sys.p} q={sys.q}")
print(f"unstable modes: {np.count_nonzero(eig > 0)}, max Re = {eig.max():.4f}")

# %% [markdown]
# ## Gramians on [0, T] and Hankel singular values

# %%
T = 1.0
gram = exact_gramians(sys, T)
tr = balanced_transform(gram.P, gram.Q)
for i, s in enumerate(tr.sigma[:12], start=1):
    print(f"sigma_{i:<2d} = {s:.3e}")

# %% [markdown]
# ## Reduced models, bound and simulated error

# %%
u = benchmark_control(T)
orders = [2, 4, 8, 16]
roms = [truncate(sys, tr, r) for r in orders]
bounds = [aposteriori_bound(sys, rom, T, u.l2_norm(T)).bound for rom in roms]
ests = simulate_errors(sys, roms, u, T, 1000, 2000, seed=1)
for r, b, e in zip(orders, bounds, ests):
    print(f"r={r:2d}  bound={b:.3e}  mc={e.sup_error:.3e} (se {e.sup_stderr:.1e})")
