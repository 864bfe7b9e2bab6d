"""Time-limited reachability and observability Gramians.

``P_T`` and ``Q_T`` solve

    (L_A + Pi)(P_T)   = F(T) - B B^T,
    (L_A + Pi)^*(Q_T) = G(T) - C^T C,

and the three strategies here differ only in how the terminal values
``F(T)``, ``G(T)`` are obtained: exactly through the covariance flow, by a
control-variate Monte Carlo estimator, or by the deterministic surrogate
``e^{AT} X e^{A^T T} + c * int_0^T e^{As} Pi(I) e^{A^T s} ds``.
"""

from dataclasses import dataclass, field, replace
import logging

import numpy as np
import scipy.linalg as sla

from ._errors import QuadratureError, SolverError
from .covflow import terminal_F, terminal_G
from .lyap import solve_generalized, solve_standard_lyapunov
from .mcsim import _RunningMoments, simulate_matrix_paths

__all__ = [
    "GramianSet",
    "EstimatorConfig",
    "ApproxConfig",
    "exact_gramians",
    "sampled_gramians",
    "approx_gramians",
    "sample_terminal_covariance",
    "integral_term",
    "surrogate_terminal",
    "clamp_psd",
]

log = logging.getLogger(__name__)

PSD_TOL = 1e-9
# correction-off default above this state dimension
ITO_CORRECTION_MAX_N = 200


@dataclass(frozen=True)
class GramianSet:
    """Pair of Gramians with the strategy that produced them."""

    P: np.ndarray
    Q: np.ndarray
    T: float
    provenance: str
    diagnostics: dict = field(default_factory=dict)

    def hankel_singular_values(self):
        """``sqrt(eig(P Q))`` in descending order."""
        ev = np.linalg.eigvals(self.P @ self.Q).real
        return np.sqrt(np.clip(np.sort(ev)[::-1], 0.0, None))


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings of the sampled terminal-covariance estimator.

    Attributes
    ----------
    M : int
        Number of realizations.
    n_g : int
        Number of uniform steps on ``[0, T]`` used both for sampling the
        matrix SDE and for the left-point Ito sum.
    c : float
        Constant in front of the integral term of the control variate.
    include_ito_correction : bool or None
        ``None`` enables the correction for ``n <= 200`` only.
    seed : int
    scheme : {'exponential', 'semi-implicit'}
        Sampling kernel. The exponential Euler kernel ``x -> e^{Ah}(x + sum N_i x dw_i)``
        is exact for ``N = 0`` and uses the same ``e^{Ah}`` as the control variate.
    """

    M: int = 10
    n_g: int = 1000
    c: float = 0.0
    include_ito_correction: bool = None
    seed: int = 0
    scheme: str = "exponential"

    def __post_init__(self):
        if self.M < 1 or self.n_g < 1:
            raise ValueError("M and n_g must be at least 1")
        if not np.isfinite(self.c):
            raise ValueError("c must be finite")
        if self.scheme not in ("exponential", "semi-implicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def correction_enabled(self, n):
        if self.include_ito_correction is None:
            return n <= ITO_CORRECTION_MAX_N
        return bool(self.include_ito_correction)


@dataclass(frozen=True)
class ApproxConfig:
    """Constants of the deterministic surrogates for ``F(T)`` and ``G(T)``."""

    c_F: float = 0.0
    c_G: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.c_F) and np.isfinite(self.c_G)):
            raise ValueError("c_F and c_G must be finite")


def clamp_psd(X, name="matrix", tol=PSD_TOL, mode="clip"):
    """Symmetrize and remove negative eigenvalues.

    ``mode='clip'`` sets them to zero, ``mode='abs'`` replaces them by their
    magnitudes (keeping each eigenvector's weight in the spectrum).
    Returns the repaired matrix and the most negative eigenvalue found. A
    warning is logged when it lies below ``-tol * lambda_max``.
    """
    X = 0.5 * (X + X.T)
    w, U = np.linalg.eigh(X)
    scale = np.abs(w).max(initial=0.0)
    wmin = float(w.min(initial=0.0))
    if wmin >= 0:
        return X, wmin
    if wmin < -tol * scale:
        log.warning("%s is indefinite (eigenvalue %.3e, scale %.3e); applying %s repair", name, wmin, scale, mode)
    if mode == "clip":
        w = np.clip(w, 0.0, None)
    elif mode == "abs":
        w = np.abs(w)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    Xc = (U * w) @ U.T
    return 0.5 * (Xc + Xc.T), wmin


def _solve_pair(system, F, G, strategy, solver_kw, psd_mode="clip"):
    op = system.operator
    rhs_P = F - system.B @ system.B.T
    rhs_Q = G - system.C.T @ system.C
    P, info_P = solve_generalized(op, rhs_P, strategy, full_output=True, **solver_kw)
    Q, info_Q = solve_generalized(op.adjoint(), rhs_Q, strategy, full_output=True, **solver_kw)
    diag = {
        "strategy": strategy,
        "residual_P": float(np.linalg.norm(op.apply(P) - rhs_P) / max(1.0, np.linalg.norm(rhs_P))),
        "residual_Q": float(np.linalg.norm(op.adjoint().apply(Q) - rhs_Q) / max(1.0, np.linalg.norm(rhs_Q))),
        "iterations_P": len(info_P["residuals"]),
        "iterations_Q": len(info_Q["residuals"]),
    }
    P, diag["min_eig_P"] = clamp_psd(P, "P", mode=psd_mode)
    Q, diag["min_eig_Q"] = clamp_psd(Q, "Q", mode=psd_mode)
    diag["psd_mode"] = psd_mode
    return P, Q, diag


def exact_gramians(system, T, strategy="direct", *, method="expm-action", **solver_kw):
    """Gramians from the exact terminal values ``F(T)``, ``G(T)``.

    Parameters
    ----------
    system : StochasticLinearSystem
    T : float
    strategy : {'direct', 'iterative'}
        Solver for the generalized Lyapunov equations.
    method : {'expm-action', 'dense-expm'}
        Evaluator of the covariance flow.
    """
    F = terminal_F(system, T, method).X
    G = terminal_G(system, T, method).X
    P, Q, diag = _solve_pair(system, F, G, strategy, solver_kw)
    diag["flow_method"] = method
    return GramianSet(P=P, Q=Q, T=T, provenance="exact", diagnostics=diag)


def _phi1(z):
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


def _simpson_integral(A, W, t, rtol=1e-9, m0=16, max_m=2**14):
    prev = None
    m = m0
    while m <= max_m:
        Eh = sla.expm(A * (t / m))
        V = W.copy()
        acc = V.copy()
        for j in range(1, m + 1):
            V = Eh @ V @ Eh.T
            acc += (2.0 if j % 2 == 0 else 4.0) * V if j < m else V
        est = acc * (t / (3 * m))
        if prev is not None and np.linalg.norm(est - prev) <= rtol * max(np.linalg.norm(est), 1e-300):
            return 0.5 * (est + est.T)
        prev = est
        m *= 2
    raise QuadratureError(f"Simpson quadrature did not reach {rtol:.0e} with {max_m} intervals")


def integral_term(A, W, t, *, E=None):
    """``int_0^t e^{As} W e^{A^T s} ds`` for symmetric ``W``.

    Uses the identity ``L_A(Y) = -W + e^{At} W e^{A^T t}``. For diagonal ``A``
    this is solved entrywise (``Y_ij = W_ij t phi_1((a_i + a_j) t)``, which
    stays valid when ``a_i + a_j = 0``); otherwise by Bartels-Stewart, with a
    composite Simpson rule as fallback when ``L_A`` is singular.
    """
    A = np.asarray(A, dtype=float)
    W = np.asarray(W, dtype=float)
    if t == 0:
        return np.zeros_like(W)
    if np.count_nonzero(A - np.diag(np.diag(A))) == 0:
        a = np.diag(A)
        return W * t * _phi1((a[:, None] + a[None, :]) * t)
    if E is None:
        E = sla.expm(A * t)
    try:
        return solve_standard_lyapunov(A, E @ W @ E.T - W)
    except SolverError as exc:
        log.info("closed-form integral unavailable (%s); using Simpson quadrature", exc)
        return _simpson_integral(A, W, t)


def surrogate_terminal(A, N, K, X0, t, c):
    """``e^{At} X0 e^{A^T t} + c * int_0^t e^{As} Pi(I) e^{A^T s} ds``."""
    E = sla.expm(A * t)
    out = E @ X0 @ E.T
    if c != 0:
        out = out + c * integral_term(A, _pi_identity(A.shape[0], N, K), t, E=E)
    return 0.5 * (out + out.T)


def _pi_identity(n, N, K):
    return sum((K[i, j] * N[i] @ N[j].T for i in range(len(N)) for j in range(len(N))), np.zeros((n, n)))


def sample_terminal_covariance(system, T, cfg, side="reach", *, full_output=False):
    """Control-variate Monte Carlo estimate of ``F(T)`` or ``G(T)``.

    Each realization contributes

        x(T) x(T)^T - sum_i sum_k Fc(T - t_k, L_{N_i}(x(t_k) x(t_k)^T)) dw_{i,k}

    with ``Fc(t, X) = e^{At} X e^{A^T t} + c * int_0^t e^{As} Pi(I) e^{A^T s} ds``
    and a left-point sum on the sampling grid. For ``side='observe'`` the
    dual coefficients ``(A^T, C^T, N_i^T)`` are used.

    Returns
    -------
    ndarray
        The symmetrized mean. With ``full_output`` also a dict holding the
        entrywise standard error and the number of realizations.
    """
    if side == "reach":
        A, N, X0 = system.A, system.N, system.B
    elif side == "observe":
        A, N, X0 = system.A.T, tuple(Ni.T for Ni in system.N), system.C.T
    else:
        raise ValueError("side must be 'reach' or 'observe'")
    K = system.K
    n = A.shape[0]
    h = T / cfg.n_g
    correction = cfg.correction_enabled(n) and len(N) > 0
    G = sla.expm(A * h)
    if correction and cfg.c != 0:
        Yh = integral_term(A, _pi_identity(n, N, K), h, E=G)

    batch = max(1, min(cfg.M, 2_000_000 // (n * n))) if correction else max(1, min(cfg.M, 1000))
    moments = _RunningMoments(n * n)
    for start in range(0, cfg.M, batch):
        paths = range(start, min(start + batch, cfg.M))
        b = len(paths)
        S = np.zeros((b, n, n))
        weights = np.zeros((b, cfg.n_g))

        def observer(k, X, dw):
            nonlocal S
            XX = X @ X.transpose(0, 2, 1)
            acc = np.zeros_like(XX)
            for i, Ni in enumerate(N):
                Z = Ni @ XX
                acc += (Z + Z.transpose(0, 2, 1)) * dw[:, i, None, None]
            S = G @ (S + acc) @ G.T
            weights[:, k] = dw.sum(axis=1)

        XT = simulate_matrix_paths(
            A, N, K, X0, T, cfg.n_g, cfg.seed, paths, scheme=cfg.scheme, observer=observer if correction else None
        )
        est = XT @ XT.transpose(0, 2, 1)
        if correction:
            est -= S
            if cfg.c != 0:
                # Y(jh) = Y(h) + e^{Ah} Y((j-1)h) e^{A^T h}; step k carries Y(T - t_k) = Y((n_g - k) h)
                Y = Yh.copy()
                for j in range(1, cfg.n_g + 1):
                    est -= cfg.c * Y[None] * weights[:, cfg.n_g - j, None, None]
                    Y = Yh + G @ Y @ G.T
        if not np.all(np.isfinite(est)):
            raise SolverError(f"estimator produced non-finite values (h={h:.3e})")
        moments.merge(est.reshape(b, n * n))
    mean = moments.mean.reshape(n, n)
    mean = 0.5 * (mean + mean.T)
    if not full_output:
        return mean
    return mean, {"stderr": moments.stderr().reshape(n, n), "M": cfg.M, "correction": correction, "h": h}


def sampled_gramians(system, T, cfg, strategy="direct", *, psd_mode="abs", **solver_kw):
    """Gramians from Monte Carlo estimates of ``F(T)`` and ``G(T)``.

    The estimates enter the Lyapunov solves as they are. The resulting ``P``
    and ``Q`` can be clearly indefinite; by default their negative
    eigenvalues are replaced by magnitudes so that the eigenspaces, which
    carry the dominant directions, survive the repair.
    """
    seeds = np.random.SeedSequence(cfg.seed).generate_state(2, dtype=np.uint64)
    F, info_F = sample_terminal_covariance(system, T, replace(cfg, seed=int(seeds[0])), "reach", full_output=True)
    G, info_G = sample_terminal_covariance(system, T, replace(cfg, seed=int(seeds[1])), "observe", full_output=True)
    P, Q, diag = _solve_pair(system, F, G, strategy, solver_kw, psd_mode)
    diag.update(
        M=cfg.M,
        n_g=cfg.n_g,
        c=cfg.c,
        correction=info_F["correction"],
        seed=cfg.seed,
        stream_seeds=(int(seeds[0]), int(seeds[1])),
        max_stderr_F=float(info_F["stderr"].max()),
        max_stderr_G=float(info_G["stderr"].max()),
    )
    return GramianSet(P=P, Q=Q, T=T, provenance="sampled", diagnostics=diag)


def approx_gramians(system, T, cfg=None, strategy="direct", *, psd_mode="abs", **solver_kw):
    """Gramians from the deterministic surrogates of ``F(T)`` and ``G(T)``.

    Indefinite solutions are repaired as in :func:`sampled_gramians`.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    cfg = cfg or ApproxConfig()
    A, N, K = system.A, system.N, system.K
    F = surrogate_terminal(A, N, K, system.B @ system.B.T, T, cfg.c_F)
    G = surrogate_terminal(A.T, tuple(Ni.T for Ni in N), K, system.C.T @ system.C, T, cfg.c_G)
    P, Q, diag = _solve_pair(system, F, G, strategy, solver_kw, psd_mode)
    diag.update(c_F=cfg.c_F, c_G=cfg.c_G)
    return GramianSet(P=P, Q=Q, T=T, provenance="approx", diagnostics=diag)
