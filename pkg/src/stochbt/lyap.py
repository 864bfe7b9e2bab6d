"""Generalized Lyapunov and Sylvester operators and their solvers.

The central object is the linear map

    X -> A_l X + X A_r^T + sum_{ij} k_ij N_{l,i} X N_{r,j}^T

on ``n_l x n_r`` matrices. With ``A_l = A_r = A`` and ``N_l = N_r = N`` this
is the generalized Lyapunov operator ``L_A + Pi``; its Frobenius adjoint
transposes every coefficient.

Vectorization is row-major (``X.ravel()``), under which the operator matrix
is ``A_l (x) I + I (x) A_r + sum k_ij N_{l,i} (x) N_{r,j}``.
"""

from functools import cached_property
import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from ._errors import DimensionError, SolverError

__all__ = [
    "SylvesterOperator",
    "GeneralizedLyapunovOperator",
    "kronecker_matrix",
    "apply",
    "solve_generalized",
    "solve_standard_lyapunov",
    "solve_standard_sylvester",
    "DEFAULT_KRON_CAP",
]

DEFAULT_KRON_CAP = 10_000


def _as_noise(N, n_rows):
    N = tuple(np.asarray(Ni, dtype=float) for Ni in N)
    for Ni in N:
        if Ni.shape != (n_rows, n_rows):
            raise DimensionError(f"noise matrix has shape {Ni.shape}, expected {(n_rows, n_rows)}")
    return N


class SylvesterOperator:
    """``X -> A_l X + X A_r^T + sum k_ij N_l[i] X N_r[j]^T``.

    Parameters
    ----------
    A_left, A_right : (n_l, n_l), (n_r, n_r) array_like
    N_left, N_right : sequences of q matrices of matching sizes
    K : (q, q) array_like
        Symmetric noise covariance.
    kron_cap : int
        Largest ``n_l * n_r`` for which the dense Kronecker matrix may be
        formed.
    """

    def __init__(self, A_left, A_right, N_left=(), N_right=(), K=None, *, kron_cap=DEFAULT_KRON_CAP):
        self.A_left = np.asarray(A_left, dtype=float)
        self.A_right = np.asarray(A_right, dtype=float)
        nl, nr = self.A_left.shape[0], self.A_right.shape[0]
        if self.A_left.shape != (nl, nl) or self.A_right.shape != (nr, nr):
            raise DimensionError("A_left and A_right must be square")
        self.N_left = _as_noise(N_left, nl)
        self.N_right = _as_noise(N_right, nr)
        q = len(self.N_left)
        if len(self.N_right) != q:
            raise DimensionError("N_left and N_right must have the same length")
        self.K = np.eye(q) if K is None else np.atleast_2d(np.asarray(K, dtype=float))
        if self.K.shape != (q, q):
            raise DimensionError(f"K has shape {self.K.shape}, expected {(q, q)}")
        self.kron_cap = kron_cap
        # sum_j k_ij N_r[j], so that Pi(X) = sum_i N_l[i] X M_i^T
        self._mixed = tuple(
            sum((self.K[i, j] * self.N_right[j] for j in range(q)), np.zeros((nr, nr))) for i in range(q)
        )
        self._factor_owner = None
        self._trans = False

    @property
    def shape(self):
        """Shape ``(n_l, n_r)`` of the matrices the operator acts on."""
        return self.A_left.shape[0], self.A_right.shape[0]

    @property
    def q(self):
        return len(self.N_left)

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape != self.shape:
            raise DimensionError(f"operand has shape {X.shape}, operator acts on {self.shape}")
        return X

    def pi(self, X):
        """Noise part ``sum k_ij N_l[i] X N_r[j]^T`` alone."""
        X = self._check(X)
        out = np.zeros(self.shape)
        for Nl, M in zip(self.N_left, self._mixed):
            out += Nl @ X @ M.T
        return out

    def apply(self, X):
        X = self._check(X)
        out = self.A_left @ X + X @ self.A_right.T
        for Nl, M in zip(self.N_left, self._mixed):
            out += Nl @ X @ M.T
        return out

    __call__ = apply

    def adjoint(self):
        """Frobenius adjoint; shares this operator's dense factorization."""
        adj = type(self).__new__(type(self))
        SylvesterOperator.__init__(
            adj,
            self.A_left.T,
            self.A_right.T,
            tuple(N.T for N in self.N_left),
            tuple(N.T for N in self.N_right),
            self.K,
            kron_cap=self.kron_cap,
        )
        adj._factor_owner = self._factor_owner or self
        adj._trans = not self._trans
        return adj

    def norm_estimate(self, iters=30, seed=0):
        """Power-iteration estimate of the operator 2-norm (Frobenius geometry)."""
        rng = np.random.default_rng(seed)
        adj = self.adjoint()
        X = rng.standard_normal(self.shape)
        X /= np.linalg.norm(X)
        est = 0.0
        for _ in range(iters):
            Y = adj.apply(self.apply(X))
            nrm = np.linalg.norm(Y)
            if nrm == 0:
                return 0.0
            new = np.sqrt(nrm)
            X = Y / nrm
            if abs(new - est) <= 1e-3 * new:
                est = new
                break
            est = new
        return est

    def kronecker(self):
        """Dense matrix of the operator under row-major vectorization."""
        nl, nr = self.shape
        size = nl * nr
        if size > self.kron_cap:
            raise DimensionError(
                f"Kronecker matrix of order {size} exceeds the cap {self.kron_cap}; "
                "use the matrix-free apply/expm_action paths or raise kron_cap"
            )
        Kr = np.zeros((size, size))
        Kv = Kr.reshape(nl, nr, nl, nr)
        for b in range(nr):
            Kv[:, b, :, b] += self.A_left
        for a in range(nl):
            Kv[a, :, a, :] += self.A_right
        for Nl, M in zip(self.N_left, self._mixed):
            for a in range(nl):
                Kv[a] += M[:, None, :] * Nl[a][None, :, None]
        return Kr

    @cached_property
    def _lu(self):
        if self._factor_owner is not None:
            return self._factor_owner._lu
        Kr = self.kronecker()
        anorm = np.abs(Kr).sum(axis=0).max()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(Kr, overwrite_a=True, check_finite=False)
        del Kr
        rcond, info = sla.lapack.dgecon(lu, anorm, norm="1")
        smin = anorm * rcond
        if not rcond > 1e-14:
            raise SolverError(
                f"generalized Lyapunov operator is numerically singular: reciprocal condition "
                f"number {rcond:.2e}, smallest singular value about {smin:.2e}"
            )
        return lu, piv, rcond

    def rcond(self):
        """Reciprocal 1-norm condition estimate of the Kronecker matrix."""
        return self._lu[2]

    def _direct(self, L):
        lu, piv, _ = self._lu
        trans = 1 if self._trans else 0
        x = sla.lu_solve((lu, piv), L.ravel(), trans=trans, check_finite=False)
        return x.reshape(self.shape)

    def solve(self, L, strategy="direct", **kwargs):
        """Solve ``op(X) = L``; see :func:`solve_generalized`."""
        return solve_generalized(self, L, strategy=strategy, **kwargs)

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.shape}, q={self.q})"


class GeneralizedLyapunovOperator(SylvesterOperator):
    """``L_A + Pi`` (``mode='primal'``) or its adjoint ``L_A^* + Pi^*``.

    >>> op = GeneralizedLyapunovOperator([[-1.0]], [[[1.0]]], [[1.0]])
    >>> op.apply(np.array([[2.0]]))
    array([[-2.]])
    """

    def __init__(self, A, N=(), K=None, *, adjoint=False, kron_cap=DEFAULT_KRON_CAP):
        A = np.asarray(A, dtype=float)
        N = tuple(np.asarray(Ni, dtype=float) for Ni in N)
        super().__init__(A, A, N, N, K, kron_cap=kron_cap)
        self.mode = "primal"
        if adjoint:
            primal = GeneralizedLyapunovOperator(A, N, K, kron_cap=kron_cap)
            self.__dict__.update(primal.adjoint().__dict__)

    @classmethod
    def from_system(cls, system, mode="primal", **kwargs):
        op = cls(system.A, system.N, system.K, **kwargs)
        return op.adjoint() if mode == "adjoint" else op

    def adjoint(self):
        adj = super().adjoint()
        adj.mode = "adjoint" if self.mode == "primal" else "primal"
        return adj


def apply(op, X):
    """Apply ``op`` to ``X`` without forming the Kronecker matrix."""
    return op.apply(X)


def kronecker_matrix(op_or_system, cap=DEFAULT_KRON_CAP):
    """Dense Kronecker matrix of an operator or of a system's primal operator."""
    op = op_or_system
    if not isinstance(op, SylvesterOperator):
        op = GeneralizedLyapunovOperator(op.A, op.N, op.K)
    old = op.kron_cap
    op.kron_cap = cap
    try:
        return op.kronecker()
    finally:
        op.kron_cap = old


def _is_symmetric_operator(op):
    return op.A_left is op.A_right or (
        op.A_left.shape == op.A_right.shape
        and np.array_equal(op.A_left, op.A_right)
        and all(np.array_equal(a, b) for a, b in zip(op.N_left, op.N_right))
    )


def solve_generalized(
    op,
    L,
    strategy="direct",
    *,
    tol=1e-8,
    max_iter=500,
    shift=None,
    full_output=False,
):
    """Solve ``op(X) = L``.

    Parameters
    ----------
    op : SylvesterOperator
    L : array_like
        Right-hand side with ``op.shape``.
    strategy : {'direct', 'iterative', 'krylov'}
        ``'direct'`` factors the Kronecker matrix (cached on ``op``).
        ``'iterative'`` runs the splitting
        ``(L_A - shift) X_{k+1} = L - Pi(X_k) - shift * X_k`` with a
        Bartels-Stewart inner solve; convergence is monitored, not assumed.
        ``'krylov'`` runs restarted GMRES on the operator, preconditioned by
        the same shifted standard equation; it also converges when the
        splitting does not (unstable ``A`` with strong noise).
    tol : float
        Required residual ``||op(X) - L||_F <= tol * max(1, ||L||_F)``.
    shift : float, optional
        Shift for the iterative splitting; needed when ``L_A`` itself is
        singular.
    full_output : bool
        Also return a dict with the residual history.

    Raises
    ------
    SolverError
        Singular operator, non-convergence or divergence.
    """
    L = op._check(L)
    bound = tol * max(1.0, np.linalg.norm(L))
    history = []
    symmetric = _is_symmetric_operator(op)
    if symmetric:
        L = 0.5 * (L + L.T)

    if strategy == "direct":
        X = op._direct(L)
        for _ in range(3):
            R = L - op.apply(X)
            res = np.linalg.norm(R)
            history.append(res)
            if res <= bound:
                break
            X = X + op._direct(R)
        else:
            raise SolverError(f"direct solve residual {res:.3e} exceeds {bound:.3e}", history)
    elif strategy == "iterative":
        X, history = _splitting(op, L, bound, max_iter, shift)
    elif strategy == "krylov":
        X, history = _gmres(op, L, bound, max_iter, shift)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")

    if symmetric:
        X = 0.5 * (X + X.T)
    if full_output:
        return X, {"strategy": strategy, "residuals": history}
    return X


def _splitting(op, L, bound, max_iter, shift):
    mu = 0.0 if shift is None else float(shift)
    Al = op.A_left - 0.5 * mu * np.eye(op.shape[0])
    Ar = op.A_right - 0.5 * mu * np.eye(op.shape[1])
    X = np.zeros(op.shape)
    history = []
    growth = 0
    for _ in range(max_iter):
        X = solve_standard_sylvester(Al, Ar, L - op.pi(X) - mu * X, check=False)
        res = np.linalg.norm(op.apply(X) - L)
        if not np.isfinite(res):
            raise SolverError("iterative splitting produced non-finite iterates", history)
        growth = growth + 1 if history and res > history[-1] else 0
        history.append(res)
        if res <= bound:
            return X, history
        if growth >= 10:
            raise SolverError(f"iterative splitting diverges (residual {res:.3e} grew for 10 steps)", history)
    raise SolverError(f"iterative splitting did not converge in {max_iter} steps (residual {res:.3e})", history)


class _ShiftedSylvester:
    """Solver of ``(A_l - s/2) X + X (A_r - s/2)^T = R`` with cached Schur forms."""

    def __init__(self, A_left, A_right, shift):
        nl, nr = A_left.shape[0], A_right.shape[0]
        self.Al = A_left - 0.5 * shift * np.eye(nl)
        self.Ar = A_right - 0.5 * shift * np.eye(nr)
        self.diagonal = not (np.count_nonzero(self.Al - np.diag(np.diag(self.Al))) or
                             np.count_nonzero(self.Ar - np.diag(np.diag(self.Ar))))
        if self.diagonal:
            self.D = np.diag(self.Al)[:, None] + np.diag(self.Ar)[None, :]
        else:
            self.Tl, self.Ul = sla.schur(self.Al, output="real")
            self.Tr, self.Ur = sla.schur(self.Ar, output="real")

    def __call__(self, R):
        if self.diagonal:
            return R / self.D
        C = self.Ul.T @ R @ self.Ur
        Y, scale, info = sla.lapack.dtrsyl(self.Tl, self.Tr, C, trana="N", tranb="T", isgn=1)
        if info < 0:
            raise SolverError(f"triangular Sylvester solve failed (info={info})")
        return self.Ul @ (Y / scale) @ self.Ur.T


def _auto_shift(op):
    """Smallest shift from a fixed ladder keeping ``L_A - shift`` well separated from singular."""
    ev_l, ev_r = np.linalg.eigvals(op.A_left), np.linalg.eigvals(op.A_right)
    sums = (ev_l[:, None] + ev_r[None, :]).ravel()
    scale = max(1.0, np.abs(sums).max(initial=0.0))
    for mu in (0.0, 0.5, 1.0, 1.5, 2.5, 4.0):
        if np.abs(sums - mu).min() > 1e-3 * scale:
            return mu
    return 0.5 * scale


def _gmres(op, L, bound, max_iter, shift, restart=100):
    mu = _auto_shift(op) if shift is None else float(shift)
    prec = _ShiftedSylvester(op.A_left, op.A_right, mu)
    size = L.size
    shape = op.shape
    A_lin = spla.LinearOperator((size, size), matvec=lambda v: op.apply(v.reshape(shape)).ravel())
    M_lin = spla.LinearOperator((size, size), matvec=lambda v: prec(v.reshape(shape)).ravel())
    history = []
    x = np.zeros(size)
    for _ in range(4):
        x, info = spla.gmres(
            A_lin, L.ravel(), x0=x, rtol=0.0, atol=0.1 * bound, restart=restart, maxiter=max_iter, M=M_lin,
            callback=history.append, callback_type="pr_norm",
        )
        res = np.linalg.norm(op.apply(x.reshape(shape)) - L)
        if res <= bound:
            return x.reshape(shape), history
        if info < 0:
            break
    raise SolverError(f"GMRES did not reach residual {bound:.3e} (last {res:.3e}, shift {mu})", history)


def _collision(ev_left, ev_right, scale, tol):
    gap = np.abs(ev_left[:, None] + ev_right[None, :]).min()
    return gap <= tol * max(1.0, scale), gap


def solve_standard_sylvester(A_left, A_right, RHS, *, check=True, tol=1e-10):
    """Solve ``A_l X + X A_r^T = RHS`` by Schur reduction (Bartels-Stewart)."""
    A_left = np.asarray(A_left, dtype=float)
    A_right = np.asarray(A_right, dtype=float)
    RHS = np.asarray(RHS, dtype=float)
    ev_l, ev_r = np.linalg.eigvals(A_left), np.linalg.eigvals(A_right)
    scale = max(np.abs(ev_l).max(initial=0), np.abs(ev_r).max(initial=0))
    hit, gap = _collision(ev_l, ev_r, scale, 1e-12)
    if hit:
        raise SolverError(
            f"eigenvalue collision: lambda_i(A_l) + lambda_j(A_r) = {gap:.2e}; "
            "the standard equation is singular"
        )
    X = sla.solve_sylvester(A_left, A_right.T, RHS)
    if check:
        res = np.linalg.norm(A_left @ X + X @ A_right.T - RHS)
        if res > tol * max(1.0, np.linalg.norm(RHS)):
            raise SolverError(f"Sylvester residual {res:.3e} exceeds tolerance")
    return X


def solve_standard_lyapunov(A, RHS, *, check=True, tol=1e-10):
    """Solve ``A X + X A^T = RHS`` (Bartels-Stewart); result symmetrized."""
    A = np.asarray(A, dtype=float)
    RHS = np.asarray(RHS, dtype=float)
    ev = np.linalg.eigvals(A)
    hit, gap = _collision(ev, ev, np.abs(ev).max(initial=0), 1e-12)
    if hit:
        raise SolverError(f"eigenvalue collision: lambda_i(A) + lambda_j(A) = {gap:.2e}")
    X = sla.solve_continuous_lyapunov(A, RHS)
    X = 0.5 * (X + X.T)
    if check:
        res = np.linalg.norm(A @ X + X @ A.T - RHS)
        if res > tol * max(1.0, np.linalg.norm(RHS)):
            raise SolverError(f"Lyapunov residual {res:.3e} exceeds {tol:.1e} * max(1, ||RHS||)")
    return X
