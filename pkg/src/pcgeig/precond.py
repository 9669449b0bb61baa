"""Preconditioners approximating the inverse of the shifted operator A - sigma*M.

A preconditioner here is a symmetric positive definite map ``T`` applied to
residuals; the quality that matters for all convergence estimates is the
spectral condition number of the pencil ``(A - sigma*M, T^{-1})`` (its
extreme eigenvalues ``alpha_1, alpha_n`` give ``kappa = alpha_n/alpha_1``).
``quality_metrics`` computes these numbers exactly at desk scale, which the
tests use to pin bound constants instead of guessing them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sparse
import scipy.sparse.linalg as sparse_linalg

from .linops import (
    DimensionMismatch,
    HermitianOperator,
    HermitianPencil,
    IdentityOperator,
    NotPositiveDefinite,
    NumericalBreakdown,
    as_operator,
    _check_vector,
)

__all__ = [
    "Preconditioner",
    "IdentityPreconditioner",
    "JacobiPreconditioner",
    "DensePreconditioner",
    "DenseShiftedInverse",
    "IncompleteCholesky",
    "UserPreconditioner",
    "jacobi_preconditioner",
    "incomplete_cholesky",
    "PrecondQuality",
    "quality_metrics",
    "spd_defect",
]

QUALITY_SIZE_CAP = 512


class Preconditioner:
    """Base class: SPD map ``r -> T r`` of fixed dimension."""

    kind = "abstract"

    def __init__(self, n, dtype=float):
        self.n = int(n)
        self.dtype = np.dtype(dtype)

    def apply(self, r):
        raise NotImplementedError

    def to_dense(self):
        """Dense T, for diagnostics; columns via unit-vector applies by default."""
        cols = np.empty((self.n, self.n), dtype=self.dtype)
        e = np.zeros(self.n, dtype=self.dtype)
        for j in range(self.n):
            e[j] = 1.0
            cols[:, j] = self.apply(e)
            e[j] = 0.0
        return 0.5 * (cols + cols.conj().T)

    def __matmul__(self, r):
        return self.apply(r)


class IdentityPreconditioner(Preconditioner):
    kind = "identity"

    def apply(self, r):
        r = _check_vector(r, self.n, name="r")
        return r.copy()

    def to_dense(self):
        return np.eye(self.n)


class JacobiPreconditioner(Preconditioner):
    """T = diag(A - sigma*M)^{-1}; requires a strictly positive shifted diagonal."""

    kind = "jacobi"

    def __init__(self, diag):
        diag = np.asarray(diag, dtype=float)
        if np.any(diag <= 0.0) or not np.all(np.isfinite(diag)):
            raise NotPositiveDefinite(
                "Jacobi preconditioner needs a positive diagonal; min entry %.3e"
                % diag.min())
        super().__init__(diag.size)
        self.inv_diag = 1.0 / diag

    def apply(self, r):
        r = _check_vector(r, self.n, name="r")
        return self.inv_diag * r

    def to_dense(self):
        return np.diag(self.inv_diag)


def jacobi_preconditioner(pencil_or_a, sigma=0.0):
    """Build the Jacobi (diagonal) preconditioner for ``A - sigma*M``."""
    if isinstance(pencil_or_a, HermitianPencil):
        a, m = pencil_or_a.a, pencil_or_a.m
    else:
        a, m = as_operator(pencil_or_a), None
    da = _operator_diagonal(a)
    if sigma != 0.0:
        dm = np.ones(a.n) if m is None or isinstance(m, IdentityOperator) \
            else _operator_diagonal(m)
        da = da - sigma * dm
    return JacobiPreconditioner(da)


def _operator_diagonal(op):
    mat = getattr(op, "mat", None)
    if mat is not None:
        if sparse.issparse(mat):
            return np.asarray(mat.diagonal()).real
        return np.diag(mat).real.copy()
    if hasattr(op, "diag"):
        return op.diag.copy()
    if isinstance(op, IdentityOperator):
        return np.ones(op.n)
    return np.diag(op.to_dense()).real.copy()


class DensePreconditioner(Preconditioner):
    """Explicit dense SPD matrix T; mostly a testing device."""

    kind = "dense"

    def __init__(self, t):
        t = np.asarray(t)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise DimensionMismatch("T must be square")
        defect = np.abs(t - t.conj().T).max()
        if defect > 1e-12 * max(np.abs(t).max(), 1e-300):
            raise NotPositiveDefinite("T is not Hermitian (asymmetry %.3e)" % defect)
        t = 0.5 * (t + t.conj().T)
        try:
            scipy.linalg.cholesky(t, lower=True)
        except scipy.linalg.LinAlgError:
            raise NotPositiveDefinite("T is not positive definite") from None
        super().__init__(t.shape[0], t.dtype)
        self.mat = t

    def apply(self, r):
        r = _check_vector(r, self.n, name="r")
        return self.mat @ r

    def to_dense(self):
        return self.mat.copy()


class DenseShiftedInverse(Preconditioner):
    """Exact T = (A - sigma*M)^{-1} via a dense Cholesky factorization.

    This is the ``kappa = 1`` reference preconditioner; sigma must stay
    strictly below the smallest pencil eigenvalue for A - sigma*M to be
    definite, otherwise the factorization fails.
    """

    kind = "dense-shifted-inverse"

    def __init__(self, pencil, sigma):
        a_dense = pencil.a.to_dense()
        shifted = a_dense - sigma * pencil.m.to_dense()
        shifted = 0.5 * (shifted + shifted.conj().T)
        try:
            self._factor = scipy.linalg.cho_factor(shifted, lower=True)
        except scipy.linalg.LinAlgError:
            raise NotPositiveDefinite(
                "A - sigma*M with sigma=%.6g is not positive definite; choose "
                "a shift below the smallest eigenvalue" % sigma) from None
        super().__init__(pencil.n, shifted.dtype)
        self.sigma = float(sigma)

    def apply(self, r):
        r = _check_vector(r, self.n, name="r")
        return scipy.linalg.cho_solve(self._factor, r)

    def to_dense(self):
        t = scipy.linalg.cho_solve(self._factor, np.eye(self.n, dtype=self.dtype))
        return 0.5 * (t + t.conj().T)


class UserPreconditioner(Preconditioner):
    """Wrap an arbitrary callable ``r -> T r``; SPD is the caller's promise."""

    kind = "user"

    def __init__(self, fn, n, dtype=float):
        super().__init__(n, dtype)
        self._fn = fn

    def apply(self, r):
        r = _check_vector(r, self.n, name="r")
        out = np.asarray(self._fn(r))
        if out.shape != (self.n,):
            raise DimensionMismatch("user preconditioner returned shape %r"
                                    % (out.shape,))
        return out


class IncompleteCholesky(Preconditioner):
    """T = (L L*)^{-1} from a drop-tolerance incomplete factorization of A - sigma*M.

    Dropping is relative to the 2-norms of the rows of the *original* shifted
    matrix: a fill-in or retained entry in row i is discarded when its
    magnitude falls below ``droptol * ||row_i||``.  droptol=0 keeps all fill
    and reproduces the exact factorization.

    A non-positive pivot aborts the sweep; one retry is made with the
    diagonal inflated by a factor 1 + 1e-3 before giving up.
    """

    kind = "ichol"

    def __init__(self, lower, sigma, droptol, boosted):
        super().__init__(lower.shape[0], lower.dtype)
        self.sigma = float(sigma)
        self.droptol = float(droptol)
        self.boosted = bool(boosted)
        self.lower = lower.tocsr()
        # SuperLU on the triangular factors gives C-speed solves; the solves
        # are exact regardless of any internal permutation.
        self._lu_l = sparse_linalg.splu(lower.tocsc(),
                                        permc_spec="NATURAL",
                                        options={"DiagPivotThresh": 0.0})
        self._lu_lt = sparse_linalg.splu(lower.conj().T.tocsc(),
                                         permc_spec="NATURAL",
                                         options={"DiagPivotThresh": 0.0})

    def apply(self, r):
        r = _check_vector(r, self.n, name="r")
        return self._lu_lt.solve(self._lu_l.solve(r))

    def to_dense(self):
        t = self.apply_to_matrix(np.eye(self.n))
        return 0.5 * (t + t.conj().T)

    def apply_to_matrix(self, b):
        return self._lu_lt.solve(self._lu_l.solve(b))


def incomplete_cholesky(a, droptol=0.0, sigma=0.0, m=None):
    """Factor ``A - sigma*M ~= L L*`` with threshold dropping; returns the
    preconditioner applying ``(L L*)^{-1}``.

    See IncompleteCholesky for the dropping and pivot-retry rules.
    """
    if isinstance(a, HermitianPencil):
        m = a.m
        a = a.a
    a = as_operator(a)
    if droptol < 0.0:
        raise ValueError("droptol must be nonnegative")
    mat = getattr(a, "mat", None)
    if mat is None or not sparse.issparse(mat):
        mat = sparse.csr_matrix(a.to_dense())
    if sigma != 0.0:
        if m is None:
            shifted = (mat - sigma * sparse.identity(a.n, format="csr")).tocsr()
        else:
            m = as_operator(m)
            m_mat = getattr(m, "mat", None)
            if m_mat is None or not sparse.issparse(m_mat):
                m_mat = sparse.csr_matrix(m.to_dense())
            shifted = (mat - sigma * m_mat).tocsr()
    else:
        shifted = mat.tocsr()

    try:
        lower = _ic_factor(shifted, droptol)
        boosted = False
    except NumericalBreakdown:
        inflated = shifted + 1e-3 * sparse.diags(shifted.diagonal())
        try:
            lower = _ic_factor(inflated.tocsr(), droptol)
            boosted = True
        except NumericalBreakdown:
            raise NumericalBreakdown(
                "incomplete Cholesky hit a non-positive pivot even after "
                "inflating the diagonal; shift sigma=%.6g may be too large "
                "or the matrix is not positive definite" % sigma) from None
    return IncompleteCholesky(lower, sigma, droptol, boosted)


def _ic_factor(mat, droptol):
    """Column-oriented incomplete Cholesky with relative threshold dropping."""
    n = mat.shape[0]
    coo = sparse.tril(mat, format="coo")
    row_norms = np.sqrt(np.asarray(
        mat.multiply(mat.conj()).sum(axis=1)).real.ravel())
    row_norms = np.maximum(row_norms, 1e-300)

    # active lower-triangle columns as {col: {row: value}}
    cols = {}
    for i, j, v in zip(coo.row, coo.col, coo.data):
        cols.setdefault(int(j), {})[int(i)] = cols.get(int(j), {}).get(int(i), 0.0) + v

    out_rows, out_cols, out_vals = [], [], []
    for k in range(n):
        colk = cols.pop(k, {})
        d = float(np.real(colk.pop(k, 0.0)))
        if not np.isfinite(d) or d <= 0.0:
            raise NumericalBreakdown("non-positive pivot %.3e in column %d"
                                     % (d, k))
        lkk = np.sqrt(d)
        out_rows.append(k)
        out_cols.append(k)
        out_vals.append(lkk)

        # threshold dropping before the scaled column is committed
        kept = [(i, v) for i, v in sorted(colk.items())
                if abs(v) > droptol * row_norms[i]]
        if not kept:
            continue
        lcol = [(i, v / lkk) for i, v in kept]
        for i, li in lcol:
            out_rows.append(i)
            out_cols.append(k)
            out_vals.append(li)
        # Schur complement update restricted to the retained pattern
        for a_idx in range(len(lcol)):
            i, li = lcol[a_idx]
            ci = cols.setdefault(i, {})
            for b_idx in range(a_idx, len(lcol)):
                j, lj = lcol[b_idx]
                # update entry (j, i) of the remaining lower triangle (j >= i)
                ci[j] = ci.get(j, 0.0) - lj * np.conj(li)
    lower = sparse.coo_matrix((out_vals, (out_rows, out_cols)), shape=(n, n))
    return lower.tocsr()


@dataclass
class PrecondQuality:
    """Exact spectral quality numbers of a preconditioner at desk scale."""

    kappa: float
    eta: float
    beta_min: float
    beta_max: float
    mu1: float
    sigma: float
    lambda1: float
    lambda2: float
    lambda_n: float
    alphas: np.ndarray

    def as_dict(self):
        return {
            "kappa": self.kappa,
            "eta": self.eta,
            "beta_min": self.beta_min,
            "beta_max": self.beta_max,
            "mu1": self.mu1,
            "sigma": self.sigma,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "lambda_n": self.lambda_n,
        }


def quality_metrics(pencil, t, sigma, size_cap=QUALITY_SIZE_CAP):
    """Exact preconditioner quality for a desk-scale pencil.

    Computes the eigenvalues ``alpha_i`` of the pencil ``(A - sigma*M,
    T^{-1})``, the condition number ``kappa = alpha_n/alpha_1``, the
    convergence parameter ``eta = kappa (lambda_n - lambda_1)(lambda_2 -
    sigma) / ((lambda_2 - lambda_1)(lambda_n - sigma))``, the stepwise
    factor window ``[beta_min, beta_max] = [alpha_1 psi_2, alpha_n psi_n]``
    with ``psi_i = (lambda_i - lambda_1)/(lambda_i - sigma)``, and ``mu_1``,
    the smallest eigenvalue of ``(M, T^{-1})``.

    Dense O(n^3) work throughout; refuses problems larger than ``size_cap``.
    """
    if pencil.n > size_cap:
        raise ValueError("quality_metrics is dense-only; n=%d exceeds cap %d"
                         % (pencil.n, size_cap))
    a = pencil.a.to_dense()
    m = pencil.m.to_dense()
    lambdas = scipy.linalg.eigh(a, m, eigvals_only=True)
    lambda1, lambda_n = float(lambdas[0]), float(lambdas[-1])
    lambda2 = float(lambdas[1]) if pencil.n > 1 else lambda_n
    if sigma >= lambda1:
        raise ValueError("shift sigma=%.6g is not below the smallest "
                         "eigenvalue %.6g" % (sigma, lambda1))

    t_dense = t.to_dense() if hasattr(t, "to_dense") else np.asarray(t)
    t_dense = 0.5 * (t_dense + t_dense.conj().T)
    try:
        t_inv = scipy.linalg.inv(t_dense)
    except scipy.linalg.LinAlgError:
        raise NotPositiveDefinite("preconditioner is singular") from None
    t_inv = 0.5 * (t_inv + t_inv.conj().T)

    shifted = a - sigma * m
    shifted = 0.5 * (shifted + shifted.conj().T)
    try:
        alphas = scipy.linalg.eigh(shifted, t_inv, eigvals_only=True)
        mu = scipy.linalg.eigh(m, t_inv, eigvals_only=True)
    except scipy.linalg.LinAlgError:
        raise NotPositiveDefinite("preconditioner is not positive definite") \
            from None
    alpha1, alpha_n = float(alphas[0]), float(alphas[-1])
    if alpha1 <= 0.0:
        raise NotPositiveDefinite(
            "pencil (A - sigma*M, inv(T)) has non-positive eigenvalue %.3e"
            % alpha1)
    kappa = alpha_n / alpha1

    if pencil.n > 1 and lambda2 > lambda1:
        eta = kappa * (lambda_n - lambda1) * (lambda2 - sigma) \
            / ((lambda2 - lambda1) * (lambda_n - sigma))
    else:
        eta = float("inf")
    psi = (lambdas - lambda1) / (lambdas - sigma)
    beta_min = alpha1 * float(psi[1]) if pencil.n > 1 else 0.0
    beta_max = alpha_n * float(psi[-1])
    return PrecondQuality(
        kappa=kappa,
        eta=float(eta),
        beta_min=beta_min,
        beta_max=beta_max,
        mu1=float(mu[0]),
        sigma=float(sigma),
        lambda1=lambda1,
        lambda2=lambda2,
        lambda_n=lambda_n,
        alphas=np.asarray(alphas),
    )


def spd_defect(t, probes=100, seed=0):
    """(symmetry defect, min Rayleigh quotient) of a preconditioner under
    random probing; used by tests to certify the SPD contract cheaply."""
    rng = np.random.default_rng(seed)
    sym = 0.0
    min_rq = np.inf
    for _ in range(probes):
        v = rng.standard_normal(t.n)
        w = rng.standard_normal(t.n)
        tv = t.apply(v)
        tw = t.apply(w)
        lhs = np.vdot(v, tw)
        rhs = np.conj(np.vdot(w, tv))
        sym = max(sym, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
        rq = np.vdot(v, tv).real / np.vdot(v, v).real
        min_rq = min(min_rq, rq)
    return sym, float(min_rq)
