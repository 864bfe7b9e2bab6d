"""Modal and balancing transformations and truncation to a reduced model."""

from dataclasses import dataclass

import numpy as np

from ._errors import DimensionError, SolverError
from .sysmodel import StochasticLinearSystem
from .textio import write_matrix_file

__all__ = [
    "BalancingTransform",
    "ReducedSystem",
    "modal_transform",
    "balanced_transform",
    "truncate",
    "suggest_order",
    "save_reduced",
]

REG_FLOOR = 1e-12


@dataclass(frozen=True)
class BalancingTransform:
    """State transformation ``x -> S x`` with ``S P S^T = diag(sigma)``.

    For ``kind='balanced'`` also ``S^{-T} Q S^{-1} = diag(sigma)`` and
    ``sigma`` are the Hankel singular values; for ``kind='modal'`` ``S`` is
    orthogonal and ``sigma`` are the eigenvalues of ``P``.
    """

    S: np.ndarray
    Sinv: np.ndarray
    sigma: np.ndarray
    kind: str

    @property
    def n(self):
        return self.S.shape[0]


def _fix_signs(U, axis=0):
    """Flip columns (axis=0) so that each one's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(U), axis=axis)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def _sym_eig_desc(X):
    w, U = np.linalg.eigh(0.5 * (X + X.T))
    order = np.argsort(w)[::-1]
    return w[order], _fix_signs(U[:, order])


def modal_transform(P):
    """Orthogonal ``S`` whose rows are eigenvectors of ``P`` in descending order."""
    P = np.asarray(P, dtype=float)
    w, U = _sym_eig_desc(P)
    S = U.T
    return BalancingTransform(S=S, Sinv=U, sigma=np.clip(w, 0.0, None), kind="modal")


def _psd_factor(X, name):
    w, U = _sym_eig_desc(X)
    wmax = w[0]
    if not wmax > 0:
        raise SolverError(f"{name} has no positive eigenvalue")
    floor = REG_FLOOR * wmax
    clipped = int(np.count_nonzero(w < floor))
    return U * np.sqrt(np.clip(w, floor, None)), clipped


def balanced_transform(P, Q):
    """Balancing transformation from ``P = K K^T``, ``Q = L L^T``.

    With the SVD ``K^T L = V diag(s) U^T`` the transformation is
    ``S = diag(s)^{-1/2} U^T L^T`` and ``S^{-1} = K V diag(s)^{-1/2}``.
    Eigenvalues of ``P`` and ``Q`` below ``1e-12 * lambda_max`` are raised to
    that floor before factoring.

    Raises
    ------
    SolverError
        If the product ``K^T L`` is numerically rank deficient even after
        the floor.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape or P.shape[0] != P.shape[1]:
        raise DimensionError("P and Q must be square of equal size")
    Kf, clipped_P = _psd_factor(P, "P")
    Lf, clipped_Q = _psd_factor(Q, "Q")
    V, s, Ut = np.linalg.svd(Kf.T @ Lf)
    n = P.shape[0]
    rank = int(np.count_nonzero(s > np.finfo(float).eps * n * s[0]))
    if rank < n:
        raise SolverError(
            f"K^T L has numerical rank {rank} < {n} (rank gap {n - rank}; "
            f"{clipped_P} eigenvalues of P and {clipped_Q} of Q were floored)"
        )
    r = 1.0 / np.sqrt(s)
    Sinv = _fix_signs((Kf @ V) * r)
    # flipping a column of S^-1 flips the matching row of S
    signs = np.sign(np.sum(Sinv * ((Kf @ V) * r), axis=0))
    S = ((Ut.T * signs) * r).T @ Lf.T
    return BalancingTransform(S=S, Sinv=Sinv, sigma=s, kind="balanced")


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    """Truncated system together with all partition blocks.

    The reduced coefficients are ``A11 = W^T A V``, ``B1 = W^T B``,
    ``C1 = C V`` and ``N11[i] = W^T N_i V``, where ``V`` holds the first ``r``
    columns of ``S^{-1}`` and ``W^T`` the first ``r`` rows of ``S``.
    """

    r: int
    A11: np.ndarray
    B1: np.ndarray
    C1: np.ndarray
    N11: tuple
    V: np.ndarray
    W: np.ndarray
    K: np.ndarray
    A12: np.ndarray
    A21: np.ndarray
    A22: np.ndarray
    B2: np.ndarray
    C2: np.ndarray
    N12: tuple
    N21: tuple
    N22: tuple
    sigma1: np.ndarray
    sigma2: np.ndarray
    kind: str

    def as_system(self):
        return StochasticLinearSystem(self.A11, self.B1, self.C1, self.N11, self.K)


def truncate(system, tr, r):
    """Reduced model of order ``r`` in the coordinates of ``tr``."""
    n = system.n
    if not 1 <= r <= n:
        raise ValueError(f"r must lie in [1, {n}]")
    if tr.S.shape != (n, n):
        raise DimensionError("transformation does not match the system")
    S, Sinv = tr.S, tr.Sinv
    A_S = S @ system.A @ Sinv
    B_S = S @ system.B
    C_S = system.C @ Sinv
    N_S = tuple(S @ Ni @ Sinv for Ni in system.N)
    return ReducedSystem(
        r=r,
        A11=A_S[:r, :r],
        B1=B_S[:r],
        C1=C_S[:, :r],
        N11=tuple(M[:r, :r] for M in N_S),
        V=Sinv[:, :r],
        W=S[:r].T,
        K=system.K,
        A12=A_S[:r, r:],
        A21=A_S[r:, :r],
        A22=A_S[r:, r:],
        B2=B_S[r:],
        C2=C_S[:, r:],
        N12=tuple(M[:r, r:] for M in N_S),
        N21=tuple(M[r:, :r] for M in N_S),
        N22=tuple(M[r:, r:] for M in N_S),
        sigma1=tr.sigma[:r],
        sigma2=tr.sigma[r:],
        kind=tr.kind,
    )


def suggest_order(sigma, tol):
    """Smallest ``r`` with ``sigma[r] <= tol * sigma[0]`` (``len(sigma)`` if none)."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    sigma = np.asarray(sigma, dtype=float)
    small = np.nonzero(sigma[1:] <= tol * sigma[0])[0]
    return int(small[0]) + 1 if small.size else len(sigma)


def save_reduced(path, rom):
    """Write the reduced coefficients and projectors as MATRIX blocks."""
    blocks = [("A11", rom.A11), ("B1", rom.B1), ("C1", rom.C1)]
    blocks += [(f"N11_{i + 1}", M) for i, M in enumerate(rom.N11)]
    blocks += [("K", rom.K), ("V", rom.V), ("W", rom.W)]
    header = f"ROM r={rom.r} n={rom.V.shape[0]} kind={rom.kind}"
    write_matrix_file(path, blocks, header="# " + header)
