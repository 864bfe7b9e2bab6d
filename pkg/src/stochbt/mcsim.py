"""Monte Carlo simulation of the full and reduced SDEs under common noise.

Paths are stepped with the drift-implicit Euler-Maruyama scheme

    (I - h A) x_{k+1} = x_k + h B u(t_k) + sum_i N_i x_k dw_{i,k}.

Wiener increments come from a counter-based generator keyed by
``(seed, path)``, so the increments of one path do not depend on batch
layout or on how many other paths are simulated.
"""

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.linalg as sla

from ._errors import DimensionError, SimulationError
from .textio import write_csv

__all__ = [
    "NoisePlan",
    "OutputErrorEstimate",
    "LinearStepper",
    "wiener_increments",
    "simulate_pair",
    "simulate_errors",
    "simulate_matrix_state",
    "simulate_matrix_paths",
]

DEFAULT_BATCH = 1000


def _covariance_factor(K):
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.size == 0:
        return K.copy()
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        pass
    w, U = np.linalg.eigh(0.5 * (K + K.T))
    scale = max(np.abs(w).max(), 1.0)
    if w.min() < -1e-12 * scale:
        raise SimulationError(f"noise covariance is not positive semidefinite (eigenvalue {w.min():.3e})")
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


@dataclass(frozen=True)
class NoisePlan:
    """Increments of a ``q``-dimensional Wiener process with covariance ``K t``.

    ``factor`` is the Cholesky factor of ``K`` or, when ``K`` is singular,
    its symmetric square root.
    """

    K: np.ndarray
    h: float
    steps: int
    seed: int
    factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if K.shape[0] != K.shape[1]:
            raise DimensionError("K must be square")
        if not (self.h > 0 and self.steps >= 1):
            raise ValueError("h must be positive and steps >= 1")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "factor", _covariance_factor(K))

    @property
    def q(self):
        return self.K.shape[0]

    def path_increments(self, path):
        """All increments of one path, shape ``(steps, q)``."""
        rng = np.random.Generator(np.random.Philox(key=np.array([self.seed, path], dtype=np.uint64)))
        xi = rng.standard_normal((self.steps, self.q))
        return math.sqrt(self.h) * xi @ self.factor.T

    def batch_increments(self, paths):
        """Increments of several paths, shape ``(len(paths), steps, q)``."""
        return np.stack([self.path_increments(j) for j in paths]) if len(paths) else np.empty((0, self.steps, self.q))


def wiener_increments(plan, path_index, step_index):
    """Increment ``dw`` of ``path_index`` on step ``step_index``."""
    if not 0 <= step_index < plan.steps:
        raise IndexError("step index out of range")
    return plan.path_increments(path_index)[step_index]


def _model_coefficients(model):
    if hasattr(model, "A11"):
        return model.A11, model.B1, model.C1, tuple(model.N11)
    return model.A, model.B, model.C, tuple(model.N)


class LinearStepper:
    """One-step propagator ``x -> G x + sum_i (G N_i x) dw_i``.

    With ``scheme='semi-implicit'`` ``G = (I - h A)^{-1}``; with
    ``scheme='exponential'`` ``G = exp(h A)``. States are stored column-wise
    (``n x P``) and every column carries its own increment.
    """

    def __init__(self, A, N, h, scheme="semi-implicit"):
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        self.h = h
        self.scheme = scheme
        if scheme == "semi-implicit":
            if np.count_nonzero(A - np.diag(np.diag(A))) == 0:
                d = 1.0 - h * np.diag(A)
                if np.any(np.abs(d) <= 1e-14):
                    raise SimulationError(f"I - hA is singular at h={h:.3e}; use a smaller step")
                G = np.diag(1.0 / d)
            else:
                lu = sla.lu_factor(np.eye(n) - h * A)
                if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * np.abs(lu[0]).max():
                    raise SimulationError(f"I - hA is singular at h={h:.3e}; use a smaller step")
                G = sla.lu_solve(lu, np.eye(n))
        elif scheme == "exponential":
            G = sla.expm(h * A)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        self.G = G
        self.GN = tuple(G @ np.asarray(Ni, dtype=float) for Ni in N)
        # diagonal propagators are applied as row scalings
        self._gdiag = np.diag(G).copy() if np.count_nonzero(G - np.diag(np.diag(G))) == 0 else None

    def step(self, X, dw, forcing=None):
        """Advance columns ``X`` (``n x P``) with increments ``dw`` (``P x q``)."""
        out = self._gdiag[:, None] * X if self._gdiag is not None else self.G @ X
        for i, GNi in enumerate(self.GN):
            out += (GNi @ X) * dw[:, i]
        if forcing is not None:
            out += forcing[:, None]
        return out


@dataclass(frozen=True)
class OutputErrorEstimate:
    """Monte Carlo estimate of ``t -> E||y(t) - ybar(t)||_2`` on the time grid."""

    t: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    paths: int
    steps: int

    @property
    def argmax(self):
        return int(np.argmax(self.mean))

    @property
    def sup_error(self):
        return float(self.mean[self.argmax])

    @property
    def sup_stderr(self):
        """Standard error at the time where the mean error peaks."""
        return float(self.stderr[self.argmax])

    def write_profile(self, path_or_stream):
        write_csv(path_or_stream, ["t", "mean_err", "stderr"], zip(self.t, self.mean, self.stderr))


class _RunningMoments:
    """Per-time mean and M2, merged batch by batch in a fixed order."""

    def __init__(self, size):
        self.count = 0
        self.mean = np.zeros(size)
        self.m2 = np.zeros(size)

    def merge(self, samples):
        # samples: (batch, size)
        nb = samples.shape[0]
        mb = samples.mean(axis=0)
        m2b = ((samples - mb) ** 2).sum(axis=0)
        total = self.count + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * (nb / total)
        self.m2 = self.m2 + m2b + delta**2 * (self.count * nb / total)
        self.count = total

    def stderr(self):
        if self.count < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self.m2 / (self.count - 1) / self.count)


def simulate_errors(system, roms, u, T, steps, paths, seed, *, batch_size=DEFAULT_BATCH):
    """Output-error estimates of several reduced models against ``system``.

    All models are driven by the same increments on every path.

    Parameters
    ----------
    system : StochasticLinearSystem
    roms : sequence of ReducedSystem or StochasticLinearSystem
    u : callable
        ``u(t)`` returning shape ``(len(t), m)`` for an array ``t``.
    T : float
    steps, paths : int
    seed : int

    Returns
    -------
    list of OutputErrorEstimate
    """
    if steps < 1 or paths < 1:
        raise ValueError("steps and paths must be at least 1")
    h = T / steps
    t = np.linspace(0.0, T, steps + 1)
    U = np.asarray(u(t), dtype=float).reshape(steps + 1, system.m)
    plan = NoisePlan(system.K, h, steps, seed)

    models = [(system.A, system.B, system.C, system.N)] + [_model_coefficients(r) for r in roms]
    for A, B, C, N in models[1:]:
        if B.shape[1] != system.m or C.shape[0] != system.p or len(N) != system.q:
            raise DimensionError("reduced model is inconsistent with the full system")
    steppers = [LinearStepper(A, N, h) for A, B, C, N in models]
    forcings = [h * (st.G @ B) @ U.T for st, (A, B, C, N) in zip(steppers, models)]  # n x (steps+1)

    moments = [_RunningMoments(steps + 1) for _ in roms]
    for start in range(0, paths, batch_size):
        idx = range(start, min(start + batch_size, paths))
        dW = plan.batch_increments(idx)
        nb = len(idx)
        states = [np.zeros((A.shape[0], nb)) for A, B, C, N in models]
        errs = np.zeros((len(roms), nb, steps + 1))
        with np.errstate(over="ignore", invalid="ignore"):  # blow-ups are reported below
            for k in range(steps):
                dw = dW[:, k, :]
                states = [st.step(X, dw, f[:, k]) for st, X, f in zip(steppers, states, forcings)]
                y = models[0][2] @ states[0]
                for j in range(len(roms)):
                    errs[j, :, k + 1] = np.linalg.norm(y - models[j + 1][2] @ states[j + 1], axis=0)
        if not np.all(np.isfinite(errs)):
            bad = np.argwhere(~np.isfinite(errs))[0]
            raise SimulationError(
                f"path blow-up at step {bad[2]} (t={t[bad[2]]:.4g}) in batch starting at path {start}; h={h:.3e}"
            )
        for j, mom in enumerate(moments):
            mom.merge(errs[j])
    return [
        OutputErrorEstimate(t=t, mean=mom.mean, stderr=mom.stderr(), paths=paths, steps=steps) for mom in moments
    ]


def simulate_pair(system, rom, u, T, steps, paths, seed, *, batch_size=DEFAULT_BATCH):
    """``sup_t E||y(t) - ybar(t)||_2`` estimate for one reduced model."""
    return simulate_errors(system, [rom], u, T, steps, paths, seed, batch_size=batch_size)[0]


def simulate_matrix_paths(A, N, K, X0, T, steps, seed, paths, *, scheme="semi-implicit", observer=None):
    """Terminal values of ``dX = A X dt + sum_i N_i X dw_i`` for several paths.

    Parameters
    ----------
    X0 : (n, k) array_like
        Common initial value.
    paths : sequence of int
        Path indices; path ``j`` uses the increments of ``(seed, j)``.
    observer : callable, optional
        Called as ``observer(k, X, dw)`` before step ``k`` with the stacked
        states ``X`` of shape ``(len(paths), n, k)`` and increments ``dw`` of
        shape ``(len(paths), q)``.

    Returns
    -------
    ndarray, shape (len(paths), n, k)
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    n, kcols = X0.shape
    h = T / steps
    plan = NoisePlan(K, h, steps, seed)
    stepper = LinearStepper(A, N, h, scheme)
    paths = list(paths)
    b = len(paths)
    dW = plan.batch_increments(paths)
    X = np.tile(X0, (1, b))  # columns grouped by path
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            dw = np.repeat(dW[:, k, :], kcols, axis=0)
            if observer is not None:
                observer(k, X.reshape(n, b, kcols).transpose(1, 0, 2), dW[:, k, :])
            X = stepper.step(X, dw)
    if not np.all(np.isfinite(X)):
        raise SimulationError(f"matrix-state path blow-up with h={h:.3e}")
    return X.reshape(n, b, kcols).transpose(1, 0, 2)


def simulate_matrix_state(system, X0, T, steps, seed, path, *, scheme="semi-implicit"):
    """Terminal sample of the homogeneous matrix SDE started at ``X0``."""
    return simulate_matrix_paths(system.A, system.N, system.K, X0, T, steps, seed, [path], scheme=scheme)[0]
