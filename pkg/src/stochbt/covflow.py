"""Terminal values of the covariance flows ``dF/dt = L_A(F) + Pi(F)``.

``F(t) = E[Phi(t) B B^T Phi(t)^T]`` is the exponential of the generalized
Lyapunov operator applied to ``B B^T``. The default evaluator never forms
the ``n^2 x n^2`` Kronecker matrix: it splits ``[0, t]`` into sub-steps and
sums a truncated Taylor series of operator applications on each.
"""

from dataclasses import dataclass
import math

import numpy as np
import scipy.linalg as sla

from ._errors import DimensionError, SolverError
from .lyap import GeneralizedLyapunovOperator, _is_symmetric_operator

__all__ = [
    "CovarianceTerminal",
    "CoupledCovarianceTerminal",
    "expm_action",
    "terminal_F",
    "terminal_G",
    "terminal_coupled",
    "extended_system_operator",
]

_UNIT_ROUNDOFF = 2.0**-53
DENSE_MAX_N = 20


@dataclass(frozen=True)
class CovarianceTerminal:
    """``F(T)`` (kind ``'reach'``) or ``G(T)`` (kind ``'observe'``)."""

    T: float
    X: np.ndarray
    kind: str
    method: str


@dataclass(frozen=True)
class CoupledCovarianceTerminal:
    """Blocks of the joint covariance of the full and reduced systems at ``T``.

    ``F`` is ``E[Phi B B^T Phi^T]``, ``barF`` its reduced counterpart and
    ``tildeF = E[Phi B B_1^T barPhi^T]`` the cross covariance (``n x r``).
    """

    T: float
    F: np.ndarray
    tildeF: np.ndarray
    barF: np.ndarray

    def assembled(self):
        return np.block([[self.F, self.tildeF], [self.tildeF.T, self.barF]])


def _taylor_substeps(op, X0, t, steps, max_order):
    h = t / steps
    Y = np.array(X0, dtype=float)
    for _ in range(steps):
        term = Y
        acc = Y.copy()
        prev = np.inf
        for k in range(1, max_order + 1):
            term = op.apply(term) * (h / k)
            acc += term
            tn = np.linalg.norm(term)
            an = np.linalg.norm(acc)
            # entrywise test so that small blocks keep their own relative accuracy
            if tn + prev <= _UNIT_ROUNDOFF * an and np.all(
                np.abs(term) <= _UNIT_ROUNDOFF * (np.abs(acc) + _UNIT_ROUNDOFF * an)
            ):
                break
            prev = tn
        else:
            raise SolverError(
                f"Taylor series did not converge within {max_order} terms on a sub-step of "
                f"length {h:.3e}; use more sub-steps"
            )
        Y = acc
        if not np.all(np.isfinite(Y)):
            raise SolverError(f"matrix exponential action overflowed at sub-step length {h:.3e}")
    return Y


def expm_action(op, X0, t, *, rtol=1e-8, max_order=60, max_doublings=6, norm=None):
    """``devec(exp(K t) vec(X0))`` computed matrix-free.

    Parameters
    ----------
    op : SylvesterOperator
        Operator ``K`` applied through ``op.apply``.
    X0 : array_like
        Initial value with ``op.shape``.
    t : float
        Non-negative time.
    rtol : float
        Two runs with ``s`` and ``2 s`` sub-steps must agree to this relative
        tolerance; ``s`` starts at ``ceil(t * ||op||)``.
    norm : float, optional
        Operator norm estimate; power iteration is used when omitted.

    Returns
    -------
    ndarray
        The result of the finer run, symmetrized when ``op`` is a Lyapunov
        operator and ``X0`` is symmetric.
    """
    X0 = op._check(X0)
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return X0.copy()
    if norm is None:
        norm = op.norm_estimate()
    steps = max(1, math.ceil(t * norm))
    coarse = _taylor_substeps(op, X0, t, steps, max_order)
    for _ in range(max_doublings):
        steps *= 2
        fine = _taylor_substeps(op, X0, t, steps, max_order)
        scale = np.linalg.norm(fine)
        if np.linalg.norm(fine - coarse) <= rtol * max(scale, np.finfo(float).tiny):
            break
        coarse = fine
    else:
        raise SolverError(f"sub-step refinement did not settle after {max_doublings} doublings")
    if _is_symmetric_operator(op) and np.array_equal(X0, X0.T):
        fine = 0.5 * (fine + fine.T)
    return fine


def _dense_expm_action(op, X0, t):
    if max(op.shape) > DENSE_MAX_N:
        raise DimensionError(f"dense matrix exponential limited to n <= {DENSE_MAX_N}")
    Kr = op.kronecker()
    return (sla.expm(Kr * t) @ np.asarray(X0, dtype=float).ravel()).reshape(op.shape)


def _flow(op, X0, T, method):
    if method == "expm-action":
        return expm_action(op, X0, T)
    if method == "dense-expm":
        X = _dense_expm_action(op, X0, T)
        return 0.5 * (X + X.T)
    raise ValueError(f"unknown method {method!r}")


def _check_psd(X, what):
    w = np.linalg.eigvalsh(X)
    scale = np.abs(w).max(initial=0.0)
    if w.min(initial=0.0) < -1e-9 * scale:
        raise SolverError(f"{what} lost positive semidefiniteness (eigenvalue {w.min():.3e}, scale {scale:.3e})")


def terminal_F(system, T, method="expm-action"):
    """``F(T) = E[Phi(T) B B^T Phi(T)^T]``."""
    if not T > 0:
        raise ValueError("T must be positive")
    X = _flow(system.operator, system.B @ system.B.T, T, method)
    _check_psd(X, "F(T)")
    return CovarianceTerminal(T=T, X=X, kind="reach", method=method)


def terminal_G(system, T, method="expm-action"):
    """``G(T)``, the reachability covariance of the dual system ``(A^T, C^T, N_i^T)``."""
    term = terminal_F(system.dual(), T, method)
    return CovarianceTerminal(T=T, X=term.X, kind="observe", method=method)


def _rom_blocks(rom):
    if hasattr(rom, "A11"):
        return rom.A11, rom.B1, tuple(rom.N11)
    return rom.A, rom.B, tuple(rom.N)


def extended_system_operator(system, A11, N11):
    """Lyapunov operator of the block-diagonal pair (full, reduced)."""
    Ae = sla.block_diag(system.A, A11)
    Ne = tuple(sla.block_diag(Ni, Mi) for Ni, Mi in zip(system.N, N11))
    return GeneralizedLyapunovOperator(Ae, Ne, system.K)


def terminal_coupled(system, rom, T, method="expm-action"):
    """Joint covariance of full and reduced fundamental solutions at ``T``.

    The flow is run once on the extended system with coefficients
    ``diag(A, A11)``, ``[B; B1]``, ``diag(N_i, N_i11)``; the blocks are then
    read off.
    """
    A11, B1, N11 = _rom_blocks(rom)
    n, r = system.n, A11.shape[0]
    if B1.shape != (r, system.m) or len(N11) != system.q:
        raise DimensionError("reduced model is inconsistent with the full system")
    op = extended_system_operator(system, A11, N11)
    Be = np.vstack([system.B, B1])
    if method == "dense-expm" and n + r > DENSE_MAX_N:
        raise DimensionError(f"dense matrix exponential limited to n + r <= {DENSE_MAX_N}")
    Fe = _flow(op, Be @ Be.T, T, method)
    return CoupledCovarianceTerminal(T=T, F=Fe[:n, :n], tildeF=Fe[:n, n:], barF=Fe[n:, n:])
