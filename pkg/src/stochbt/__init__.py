"""Balanced truncation for linear systems with multiplicative noise on finite time horizons.

The package covers the generalized Lyapunov operators, the covariance flows
that define the time-limited Gramians, three ways to obtain those Gramians
(exact, sampled and approximate), balancing and truncation, an
a-posteriori output-error bound and a Monte Carlo error estimator.
"""

from ._errors import DimensionError, QuadratureError, SimulationError, SolverError, StochBTError
from .covflow import expm_action, terminal_coupled, terminal_F, terminal_G
from .errbound import ErrorBoundReport, aposteriori_bound, hsv_representation
from .gramians import (
    ApproxConfig,
    EstimatorConfig,
    GramianSet,
    approx_gramians,
    exact_gramians,
    sampled_gramians,
)
from .lyap import GeneralizedLyapunovOperator, SylvesterOperator, solve_generalized
from .mcsim import NoisePlan, OutputErrorEstimate, simulate_errors, simulate_pair
from .reduce import BalancingTransform, ReducedSystem, balanced_transform, modal_transform, truncate
from .sysmodel import (
    BenchmarkConfig,
    ControlSignal,
    StochasticLinearSystem,
    benchmark_control,
    build_heat_spde_benchmark,
    load_system,
    save_system,
)

__version__ = "0.1.0"
