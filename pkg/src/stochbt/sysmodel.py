"""Controlled linear SDE data model and the stochastic heat-equation benchmark.

The state equation is

    dx = (A x + B u) dt + sum_i N_i x dw_i,    y = C x,

driven by a q-dimensional Wiener process with covariance ``K t``.
"""

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
from scipy import integrate

from ._errors import DimensionError, QuadratureError, StochBTError
from .textio import read_matrix_blocks, write_matrix

__all__ = [
    "StochasticLinearSystem",
    "BenchmarkConfig",
    "ControlSignal",
    "laplacian_modes",
    "build_heat_spde_benchmark",
    "benchmark_control",
    "save_system",
    "load_system",
]


def _frozen(M):
    M = np.array(M, dtype=float)
    M.setflags(write=False)
    return M


@dataclass(frozen=True, eq=False)
class StochasticLinearSystem:
    """Coefficients ``(A, B, C, N_1..N_q, K)`` of a controlled linear SDE.

    Arrays are copied and made read-only on construction, so an instance can
    be shared freely.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    N: tuple
    K: np.ndarray

    def __post_init__(self):
        A = _frozen(np.atleast_2d(self.A))
        B = np.asarray(self.B, dtype=float)
        B = _frozen(B.reshape(-1, 1) if B.ndim == 1 else B)
        C = np.asarray(self.C, dtype=float)
        C = _frozen(C.reshape(1, -1) if C.ndim == 1 else C)
        N = tuple(_frozen(np.atleast_2d(Ni)) for Ni in self.N)
        K = _frozen(np.atleast_2d(self.K))
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise DimensionError(f"B has {B.shape[0]} rows, expected {n}")
        if C.shape[1] != n:
            raise DimensionError(f"C has {C.shape[1]} columns, expected {n}")
        for i, Ni in enumerate(N):
            if Ni.shape != (n, n):
                raise DimensionError(f"N[{i}] has shape {Ni.shape}, expected {(n, n)}")
        q = len(N)
        if K.shape != (q, q):
            raise DimensionError(f"K has shape {K.shape}, expected {(q, q)}")
        mats = [A, B, C, K, *N]
        if not all(np.all(np.isfinite(M)) for M in mats):
            raise ValueError("system coefficients must be finite")
        if q:
            if not np.allclose(K, K.T, rtol=0, atol=1e-12 * max(1.0, np.abs(K).max())):
                raise ValueError("noise covariance K must be symmetric")
            kmin = np.linalg.eigvalsh(K).min()
            if kmin < -1e-12 * np.linalg.norm(K, 2):
                raise ValueError(f"noise covariance K is not PSD (eigenvalue {kmin:.3e})")
        for name, val in zip("ABCNK", (A, B, C, N, K)):
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def q(self):
        return len(self.N)

    def dual(self):
        """System with coefficients ``(A^T, C^T, B^T, N_i^T, K)``.

        Its reachability covariance is the observability covariance of
        ``self``.
        """
        return StochasticLinearSystem(
            self.A.T, self.C.T, self.B.T, tuple(Ni.T for Ni in self.N), self.K
        )

    def transformed(self, S, Sinv=None):
        """Coordinates ``x_S = S x``: ``(S A S^-1, S B, C S^-1, S N_i S^-1)``."""
        S = np.asarray(S, dtype=float)
        Sinv = np.linalg.inv(S) if Sinv is None else np.asarray(Sinv, dtype=float)
        return StochasticLinearSystem(
            S @ self.A @ Sinv,
            S @ self.B,
            self.C @ Sinv,
            tuple(S @ Ni @ Sinv for Ni in self.N),
            self.K,
        )

    @cached_property
    def operator(self):
        """Generalized Lyapunov operator ``X -> AX + XA^T + Pi(X)``.

        Cached so that dense factorizations are reused between the
        reachability and observability solves.
        """
        from .lyap import GeneralizedLyapunovOperator

        return GeneralizedLyapunovOperator(self.A, self.N, self.K)

    def __repr__(self):
        return f"StochasticLinearSystem(n={self.n}, m={self.m}, p={self.p}, q={self.q})"


# ---------------------------------------------------------------------------
# file format


def save_system(path, system):
    """Write ``system`` in the ``STOCHLIN`` text format."""
    with open(path, "w", newline="\n") as f:
        f.write(f"STOCHLIN {system.n} {system.m} {system.p} {system.q}\n")
        write_matrix(f, "A", system.A)
        write_matrix(f, "B", system.B)
        write_matrix(f, "C", system.C)
        for i, Ni in enumerate(system.N, start=1):
            write_matrix(f, f"N{i}", Ni)
        write_matrix(f, "K", system.K)


def load_system(path):
    """Read a ``STOCHLIN`` file; the constructor validates all invariants."""
    with open(path) as f:
        lines = f.readlines()
    head = lines[0].split() if lines else []
    if len(head) != 5 or head[0] != "STOCHLIN":
        raise ValueError(f"{path}: missing 'STOCHLIN n m p q' header")
    n, m, p, q = (int(v) for v in head[1:])
    blocks = dict(read_matrix_blocks(lines[1:]))
    expected = {"A": (n, n), "B": (n, m), "C": (p, n), "K": (q, q)}
    expected.update({f"N{i}": (n, n) for i in range(1, q + 1)})
    for name, shape in expected.items():
        if name not in blocks:
            raise ValueError(f"{path}: matrix {name} missing")
        if blocks[name].shape != shape:
            raise DimensionError(f"{path}: matrix {name} has shape {blocks[name].shape}, header implies {shape}")
    N = tuple(blocks[f"N{i}"] for i in range(1, q + 1))
    return StochasticLinearSystem(blocks["A"], blocks["B"], blocks["C"], N, blocks["K"])


# ---------------------------------------------------------------------------
# benchmark


@dataclass(frozen=True)
class BenchmarkConfig:
    """Parameters of the spectrally discretized heat equation.

    ``alpha`` scales the Dirichlet Laplacian, ``beta`` shifts it (large
    values make ``A`` unstable), ``gamma`` scales the multiplicative noise.
    ``rho`` is the correlation of the two Wiener processes when ``q == 2``.
    """

    alpha: float = 0.4
    beta: float = 3.0
    gamma: float = 2.0
    n: int = 100
    T: float = 1.0
    q: int = 1
    rho: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.q not in (1, 2):
            raise ValueError(f"q must be 1 or 2, got {self.q}")
        if abs(self.rho) > 1:
            raise ValueError(f"|rho| must not exceed 1, got {self.rho}")


@dataclass(frozen=True)
class ControlSignal:
    """Scalar exponential input ``u(t) = c_u * exp(-decay * t)``."""

    c_u: float
    decay: float = 0.1
    m: int = field(default=1, repr=False)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        val = self.c_u * np.exp(-self.decay * t)
        return val[..., None] * np.ones(self.m)

    def l2_norm(self, T):
        """``(int_0^T ||u(s)||^2 ds)^(1/2)`` in closed form."""
        if self.decay == 0:
            return abs(self.c_u) * math.sqrt(self.m * T)
        val = self.m * self.c_u**2 * -math.expm1(-2 * self.decay * T) / (2 * self.decay)
        return math.sqrt(val)


def benchmark_control(cfg):
    """Input normalized to unit L2 norm on ``[0, cfg.T]``."""
    T = cfg.T if isinstance(cfg, BenchmarkConfig) else float(cfg)
    if not T > 0:
        raise ValueError("T must be positive")
    c_u = math.sqrt(0.2 / -math.expm1(-0.2 * T))
    return ControlSignal(c_u=c_u, decay=0.1)


def laplacian_modes(n):
    """First ``n`` Dirichlet-Laplacian modes on ``[0, pi]^2``.

    Returns ``(lam, k1, k2)`` integer arrays sorted by ``lam = k1^2 + k2^2``
    with ties broken lexicographically in ``(k1, k2)``.
    """
    L = int(4 * n / math.pi) + 16
    while True:
        r = math.isqrt(L) + 1
        k1, k2 = np.meshgrid(np.arange(1, r + 1), np.arange(1, r + 1), indexing="ij")
        k1, k2 = k1.ravel(), k2.ravel()
        lam = k1**2 + k2**2
        keep = lam <= L
        if keep.sum() >= n:
            break
        L *= 2
    lam, k1, k2 = lam[keep], k1[keep], k2[keep]
    order = np.lexsort((k2, k1, lam))[:n]
    return lam[order], k1[order], k2[order]


def _sine_integral_center(k):
    """``int_{pi/4}^{3pi/4} sin(k s) ds`` for integer ``k >= 1``.

    Evaluated from the residue of ``k`` mod 8 so that the even-``k`` zeros
    are exact.
    """
    k = np.asarray(k)
    half = math.sqrt(2) / 2
    cos_q = np.array([1, half, 0, -half, -1, -half, 0, half])  # cos(j pi / 4)
    return (cos_q[k % 8] - cos_q[(3 * k) % 8]) / k


def _sine_integral_full(k):
    """``int_0^pi sin(k s) ds = (1 - (-1)^k) / k``."""
    k = np.asarray(k)
    return np.where(k % 2 == 1, 2.0 / k, 0.0)


def _cosine_moments(weight, kink, omegas, tol):
    """``int_0^pi weight(s) cos(w s) ds`` for each integer ``w``.

    Oscillatory integrals use QUADPACK's cosine-weighted rule; the domain is
    split at ``kink`` where the weight is not smooth.
    """
    pieces = [(0.0, np.pi)] if kink is None else [(0.0, kink), (kink, np.pi)]
    out = np.empty(len(omegas))
    for idx, w in enumerate(omegas):
        total = 0.0
        for a, b in pieces:
            if w == 0:
                val, err = integrate.quad(weight, a, b, epsabs=tol, epsrel=0, limit=200)
            else:
                val, err = integrate.quad(
                    weight, a, b, weight="cos", wvar=float(w), epsabs=tol, epsrel=0, limit=200
                )
            if not err <= 100 * tol:
                raise QuadratureError(f"cosine moment w={w} on [{a:.4f}, {b:.4f}]: error estimate {err:.2e}")
            total += val
        out[idx] = total
    return out


def _sine_products(weight, kink, kmax, tol):
    """Matrix ``G[a, b] = int_0^pi weight(s) sin(a s) sin(b s) ds``, ``a, b <= kmax``."""
    g = _cosine_moments(weight, kink, range(2 * kmax + 1), tol)
    a = np.arange(kmax + 1)
    G = 0.5 * (g[np.abs(a[:, None] - a[None, :])] - g[a[:, None] + a[None, :]])
    G[0, :] = G[:, 0] = 0.0
    return G


def noise_factor_integrals(kmax, tol=1e-12):
    """1-D factors of the noise kernel ``exp(-|z1 - pi/2| - z2)``.

    Returns ``(G1, G2)`` with ``G1[a, b] = int exp(-|s - pi/2|) sin(a s) sin(b s)``
    and ``G2[a, b] = int exp(-s) sin(a s) sin(b s)`` over ``[0, pi]``.
    """
    G1 = _sine_products(lambda s: np.exp(-abs(s - np.pi / 2)), np.pi / 2, kmax, tol)
    G2 = _sine_products(lambda s: np.exp(-s), None, kmax, tol)
    return G1, G2


def _fractional_power(M, power):
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    scale = np.abs(w).max()
    bad = w < -1e-10 * scale
    if np.any(bad):
        raise StochBTError(
            f"noise matrix is not positive semidefinite: eigenvalue {w[bad].min():.6e} "
            f"(scale {scale:.3e}); fractional power undefined"
        )
    w = np.clip(w, 0.0, None)
    return (U * w**power) @ U.T


def build_heat_spde_benchmark(cfg=None, *, quad_tol=1e-12):
    """Spectral Galerkin matrices of the controlled stochastic heat equation.

    Parameters
    ----------
    cfg : BenchmarkConfig, optional
        Defaults to ``BenchmarkConfig()`` (alpha=0.4, beta=3, gamma=2, n=100).
    quad_tol : float
        Absolute tolerance of the 1-D noise-kernel quadratures.

    Returns
    -------
    StochasticLinearSystem
        ``A = alpha * diag(-lam) + beta * I``; ``B`` projects the indicator of
        the control square ``[pi/4, 3pi/4]^2``; ``C`` averages the state over
        the complement; ``N_1`` is the Galerkin matrix of multiplication by
        ``gamma * exp(-|z1 - pi/2| - z2)``. For ``q == 2`` the second noise
        matrix is ``N_1^(6/5)`` and ``K = [[1, rho], [rho, 1]]``.
    """
    cfg = BenchmarkConfig() if cfg is None else cfg
    lam, k1, k2 = laplacian_modes(cfg.n)
    A = np.diag(-cfg.alpha * lam.astype(float) + cfg.beta)

    ctr1, ctr2 = _sine_integral_center(k1), _sine_integral_center(k2)
    full1, full2 = _sine_integral_full(k1), _sine_integral_full(k2)
    scale = 2.0 / np.pi  # normalization of h_k = (2/pi) sin(k1 z1) sin(k2 z2)
    B = (scale * ctr1 * ctr2)[:, None]
    C = (4.0 / (3.0 * np.pi**2) * scale * (full1 * full2 - ctr1 * ctr2))[None, :]

    kmax = int(max(k1.max(), k2.max()))
    G1, G2 = noise_factor_integrals(kmax, tol=quad_tol)
    M = scale**2 * G1[np.ix_(k1, k1)] * G2[np.ix_(k2, k2)]
    M = 0.5 * (M + M.T)
    N1 = cfg.gamma * M

    if cfg.q == 1:
        return StochasticLinearSystem(A, B, C, (N1,), np.ones((1, 1)))
    if cfg.gamma < 0:
        raise StochBTError("q=2 needs gamma >= 0 so that N_1 is positive semidefinite")
    N2 = cfg.gamma ** 1.2 * _fractional_power(M, 1.2)
    K = np.array([[1.0, cfg.rho], [cfg.rho, 1.0]])
    return StochasticLinearSystem(A, B, C, (N1, N2), K)
