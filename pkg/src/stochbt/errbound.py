"""A-posteriori output error bound of a reduced model and its HSV form.

For zero initial states,

    sup_t E||y(t) - ybar(t)||_2 <= eps * ||u||_{L^2_T},
    eps^2 = tr(C P C^T) + tr(C1 Pbar C1^T) - 2 tr(C Ptilde C1^T),

where ``P``, ``Pbar`` and ``Ptilde`` are the time-limited Gramian blocks of
the system formed by the full and the reduced model side by side.

The three traces are of the size of ``tr(C P C^T)`` while ``eps^2`` can be
ten orders of magnitude smaller, so the default evaluation works with the
error ``e = x - V xbar`` instead. In the coordinates ``(e, xbar)`` the
coupled system has coefficients

    [[A, D], [0, A11]],  [[N_i, E_i], [0, N_i11]],  [B - V B1; B1],

with ``D = A V - V A11`` and ``E_i = N_i V - V N_i11``, and ``y - ybar = C e``.
Then ``eps^2 = tr(C P_ee C^T)`` where ``P_ee`` is the error block of its
Gramian, obtained by block elimination with the same three operators.
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from ._errors import DimensionError, SolverError
from .covflow import expm_action, terminal_coupled
from .lyap import DEFAULT_KRON_CAP, GeneralizedLyapunovOperator, SylvesterOperator, solve_generalized
from .textio import csv_text, format_float

__all__ = [
    "ErrorBoundReport",
    "CSV_HEADER",
    "aposteriori_bound",
    "hsv_representation",
    "coupled_gramian_blocks",
]

log = logging.getLogger(__name__)

CSV_HEADER = ["r", "eps", "term_hsv", "term_cov_cross", "term_cov_diag", "agreement_residual"]
ROUNDING_FLOOR = 1e-8


@dataclass(frozen=True)
class ErrorBoundReport:
    """Error bound ``eps * u_norm`` and, when computed, the HSV-form terms.

    ``agreement_residual`` is ``|eps^2 - (term_hsv + term_cov_cross + term_cov_diag)|``;
    it and the terms are ``nan`` when only the bound was evaluated.
    """

    r: int
    eps: float
    u_norm: float
    method: str
    term_hsv: float = float("nan")
    term_cov_cross: float = float("nan")
    term_cov_diag: float = float("nan")
    agreement_residual: float = float("nan")
    eps2_raw: float = float("nan")
    data: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def bound(self):
        return self.eps * self.u_norm

    @property
    def eps2(self):
        return self.eps**2

    def csv_row(self):
        return [self.r, self.eps, self.term_hsv, self.term_cov_cross, self.term_cov_diag, self.agreement_residual]

    def to_csv(self, header=True):
        text = csv_text(CSV_HEADER, [self.csv_row()])
        return text if header else text.split("\n", 1)[1]

    def to_text(self):
        items = [
            ("r", self.r),
            ("method", self.method),
            ("eps", self.eps),
            ("u_norm", self.u_norm),
            ("bound", self.bound),
            ("term_hsv", self.term_hsv),
            ("term_cov_cross", self.term_cov_cross),
            ("term_cov_diag", self.term_cov_diag),
            ("agreement_residual", self.agreement_residual),
        ]
        return "".join(f"{k} = {format_float(v) if isinstance(v, float) else v}\n" for k, v in items)


def _rom_parts(rom):
    return rom.A11, rom.B1, rom.C1, tuple(rom.N11), rom.V


def _pick_strategy(op, strategy):
    if strategy != "auto":
        return strategy
    nl, nr = op.shape
    return "direct" if nl * nr <= op.kron_cap else "krylov"


def _solve(op, L, strategy, what):
    try:
        return solve_generalized(op, L, _pick_strategy(op, strategy))
    except SolverError as exc:
        raise SolverError(f"{what}: {exc}", exc.history) from exc


def _floor_eps2(eps2, scale, what):
    if eps2 >= 0:
        return eps2
    if eps2 >= -ROUNDING_FLOOR * scale:
        log.warning("%s: eps^2 = %.3e is negative by rounding; set to 0", what, eps2)
        return 0.0
    raise SolverError(
        f"{what}: eps^2 = {eps2:.3e} is significantly negative (scale {scale:.3e}); "
        "the reduced model and the full system are inconsistent"
    )


def coupled_gramian_blocks(system, rom, T, *, strategy="auto"):
    """Covariance and Gramian blocks of the error coordinates ``(e, xbar)``.

    Returns a dict with the terminal covariance blocks ``Fee``, ``Fex``,
    ``Fxx`` and the Gramian blocks ``Pee``, ``Pex``, ``Pbar``.
    """
    A, B, C, N, K = system.A, system.B, system.C, system.N, system.K
    A11, B1, C1, N11, V = _rom_parts(rom)
    n, r = system.n, A11.shape[0]
    if V.shape != (n, r) or B1.shape != (r, system.m) or len(N11) != system.q:
        raise DimensionError("reduced model is inconsistent with the full system")
    D = A @ V - V @ A11
    E = tuple(Ni @ V - V @ Mi for Ni, Mi in zip(N, N11))
    Be = B - V @ B1

    Ae = np.block([[A, D], [np.zeros((r, n)), A11]])
    Ne = tuple(np.block([[Ni, Ei], [np.zeros((r, n)), Mi]]) for Ni, Ei, Mi in zip(N, E, N11))
    Bx = np.vstack([Be, B1])
    Fx = expm_action(GeneralizedLyapunovOperator(Ae, Ne, K), Bx @ Bx.T, T)
    Fee, Fex, Fxx = Fx[:n, :n], Fx[:n, n:], Fx[n:, n:]

    op_bar = GeneralizedLyapunovOperator(A11, N11, K)
    Pbar = _solve(op_bar, Fxx - B1 @ B1.T, strategy, "reduced Gramian equation")

    op_cross = SylvesterOperator(A, A11, N, N11, K)
    mixed = op_cross._mixed  # sum_j k_ij N11_j
    rhs = Fex - Be @ B1.T - D @ Pbar
    for Ei, Mi in zip(E, mixed):
        rhs -= Ei @ Pbar @ Mi.T
    Pex = _solve(op_cross, rhs, strategy, "cross Gramian equation")

    op_full = system.operator
    rhs = Fee - Be @ Be.T - D @ Pex.T - Pex @ D.T
    for i in range(system.q):
        for j in range(system.q):
            kij = K[i, j]
            if kij != 0:
                rhs -= kij * (E[i] @ Pex.T @ N[j].T + N[i] @ Pex @ E[j].T + E[i] @ Pbar @ E[j].T)
    Pee = _solve(op_full, 0.5 * (rhs + rhs.T), strategy, "error Gramian equation")
    return {"Fee": Fee, "Fex": Fex, "Fxx": Fxx, "Pee": Pee, "Pex": Pex, "Pbar": Pbar, "V": V}


def _direct_blocks(system, rom, T, P, strategy):
    A, B, C, N, K = system.A, system.B, system.C, system.N, system.K
    A11, B1, C1, N11, V = _rom_parts(rom)
    n, r = system.n, A11.shape[0]
    cov = terminal_coupled(system, rom, T)
    if P is None:
        P = _solve(system.operator, cov.F - B @ B.T, strategy, "full Gramian equation")
    Pbar = _solve(GeneralizedLyapunovOperator(A11, N11, K), cov.barF - B1 @ B1.T, strategy, "reduced Gramian equation")
    op_cross = SylvesterOperator(A, A11, N, N11, K)
    Ptilde = _solve(op_cross, cov.tildeF - B @ B1.T, strategy, "cross Gramian equation")
    return {"F": cov.F, "tildeF": cov.tildeF, "barF": cov.barF, "P": P, "Pbar": Pbar, "Ptilde": Ptilde}


def aposteriori_bound(system, rom, T, u_norm=1.0, *, P=None, method="error_system", strategy="auto"):
    """Output error bound ``eps * u_norm`` of ``rom`` on ``[0, T]``.

    Parameters
    ----------
    system : StochasticLinearSystem
    rom : ReducedSystem
    T : float
    u_norm : float
        ``||u||_{L^2_T}`` of the input the bound is applied to.
    P : ndarray, optional
        Reachability Gramian of ``system``; reused by ``method='direct'``.
    method : {'error_system', 'direct'}
        ``'direct'`` evaluates the three traces literally and is only
        accurate while ``eps^2`` is well above ``1e-16 * tr(C P C^T)``.
    strategy : {'auto', 'direct', 'krylov', 'iterative'}
        Solver for the matrix equations; ``'auto'`` factors the Kronecker
        matrix when it fits the cap and falls back to GMRES otherwise.

    Returns
    -------
    ErrorBoundReport
    """
    if not T > 0:
        raise ValueError("T must be positive")
    C, C1 = system.C, rom.C1
    if method == "error_system":
        blocks = coupled_gramian_blocks(system, rom, T, strategy=strategy)
        Pee = blocks["Pee"]
        eps2 = float(np.trace(C @ Pee @ C.T))
        scale = np.linalg.norm(C) ** 2 * np.linalg.norm(Pee)
        data = blocks
    elif method == "direct":
        data = _direct_blocks(system, rom, T, P, strategy)
        t1 = float(np.trace(C @ data["P"] @ C.T))
        t2 = float(np.trace(C1 @ data["Pbar"] @ C1.T))
        t3 = float(np.trace(C @ data["Ptilde"] @ C1.T))
        eps2 = t1 + t2 - 2 * t3
        scale = abs(t1) + abs(t2) + 2 * abs(t3)
    else:
        raise ValueError(f"unknown method {method!r}")
    eps2_floored = _floor_eps2(eps2, scale, "error bound")
    return ErrorBoundReport(
        r=rom.r, eps=float(np.sqrt(eps2_floored)), u_norm=float(u_norm), method=method, eps2_raw=eps2, data=data
    )


def _full_covariances(report):
    d = report.data
    if "F" in d:
        return d["F"], d["tildeF"], d["barF"]
    V, Fee, Fex, Fxx = d["V"], d["Fee"], d["Fex"], d["Fxx"]
    tildeF = Fex + V @ Fxx
    F = Fee + Fex @ V.T + V @ Fex.T + V @ Fxx @ V.T
    return 0.5 * (F + F.T), tildeF, Fxx


def hsv_representation(system, rom, tr, T, *, report=None, strategy="auto"):
    """HSV-weighted form of ``eps^2`` for a transformation diagonalizing ``P``.

    ``eps^2`` equals ``term_hsv + term_cov_cross + term_cov_diag`` with

    * ``term_hsv = tr(Sigma_2 [C2^T C2 + 2 A12^T Qt_2
      + sum k_ij N_i12^T (2 Qt N_jS[:, r:] - Qbar N_j12)])``,
    * ``term_cov_cross = 2 tr(Qt (S Ft - F_S[:, :r]))``,
    * ``term_cov_diag = tr(Qbar (F_S11 - Fbar))``,

    where ``F_S = S F S^T``, ``Qbar`` solves
    ``A11^T Qbar + Qbar A11 + sum k_ij N_i11^T Qbar N_j11 = -C1^T C1`` and
    ``Qt`` (``r x n``) solves
    ``A11^T Qt + Qt A_S + sum k_ij N_i11^T Qt N_jS = -C1^T C_S``.

    Parameters
    ----------
    report : ErrorBoundReport, optional
        Result of :func:`aposteriori_bound` for the same inputs; computed
        when omitted.

    Raises
    ------
    SolverError
        If the equations for ``Qbar`` or ``Qt`` are singular, in which case
        the representation is not unique.
    """
    if report is None:
        report = aposteriori_bound(system, rom, T, strategy=strategy)
    n, r, K = system.n, rom.r, system.K
    S, Sinv = tr.S, tr.Sinv
    if S.shape != (n, n):
        raise DimensionError("transformation does not match the system")
    A_S = S @ system.A @ Sinv
    C_S = system.C @ Sinv
    N_S = tuple(S @ Ni @ Sinv for Ni in system.N)
    A11, C1, N11 = A_S[:r, :r], C_S[:, :r], tuple(M[:r, :r] for M in N_S)

    caveat = "the HSV representation assumes a unique solution"
    try:
        Qbar = _solve(GeneralizedLyapunovOperator(A11, N11, K).adjoint(), -C1.T @ C1, strategy, "Qbar equation")
        op_t = SylvesterOperator(
            A11.T, A_S.T, tuple(M.T for M in N11), tuple(M.T for M in N_S), K
        )
        Qt = _solve(op_t, -C1.T @ C_S, strategy, "Qtilde equation")
    except SolverError as exc:
        raise SolverError(f"{exc} ({caveat})", exc.history) from exc

    F, tildeF, barF = _full_covariances(report)
    F_S = S @ F @ S.T
    Ft_S = S @ tildeF
    sigma2 = np.asarray(tr.sigma[r:], dtype=float)

    C2 = C_S[:, r:]
    A12 = A_S[:r, r:]
    inner = C2.T @ C2 + 2 * A12.T @ Qt[:, r:]
    for i in range(system.q):
        for j in range(system.q):
            kij = K[i, j]
            if kij != 0:
                Ni12, Nj12 = N_S[i][:r, r:], N_S[j][:r, r:]
                inner += kij * Ni12.T @ (2 * Qt @ N_S[j][:, r:] - Qbar @ Nj12)
    term_hsv = float(np.sum(sigma2 * np.diag(inner))) if r < n else 0.0
    term_cross = float(2 * np.trace(Qt @ (Ft_S - F_S[:, :r])))
    term_diag = float(np.trace(Qbar @ (F_S[:r, :r] - barF)))
    total = term_hsv + term_cross + term_diag
    data = dict(report.data, Qbar=Qbar, Qtilde=Qt)
    return ErrorBoundReport(
        r=r,
        eps=report.eps,
        u_norm=report.u_norm,
        method=report.method,
        term_hsv=term_hsv,
        term_cov_cross=term_cross,
        term_cov_diag=term_diag,
        agreement_residual=abs(report.eps2_raw - total),
        eps2_raw=report.eps2_raw,
        data=data,
    )
