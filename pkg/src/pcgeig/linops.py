"""Hermitian operators, pencils and Matrix Market input.

Everything downstream (Rayleigh-Ritz kernels, preconditioners, solvers) talks
to matrices through the small interface defined here: a Hermitian linear map
of known dimension that supports ``apply`` and ``to_dense``.  Vectors are
plain one-dimensional numpy arrays, real or complex.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sparse

__all__ = [
    "DimensionMismatch",
    "InvalidVector",
    "NotHermitian",
    "NotPositiveDefinite",
    "NumericalBreakdown",
    "MatrixMarketError",
    "HermitianOperator",
    "DenseHermitianOperator",
    "SparseHermitianOperator",
    "DiagonalOperator",
    "IdentityOperator",
    "CountingOperator",
    "as_operator",
    "HermitianPencil",
    "rayleigh_quotient",
    "residual",
    "residual_norm",
    "m_inner",
    "m_norm",
    "hermiticity_defect",
    "load_matrix_market",
]

# Relative tolerance used when checking that supplied matrices are Hermitian.
HERMITICITY_RTOL = 1e-13


class DimensionMismatch(ValueError):
    """Operator/vector dimensions do not agree."""


class InvalidVector(ValueError):
    """Vector input is empty, has wrong rank, or contains non-finite entries."""


class NotHermitian(ValueError):
    """Matrix input is not Hermitian within tolerance."""


class NotPositiveDefinite(ValueError):
    """An operator required to be (positive) definite failed a definiteness probe."""


class NumericalBreakdown(RuntimeError):
    """An iteration or factorization cannot continue in floating point.

    Raised e.g. for a singular Gram matrix that survives all reduction
    fallbacks, a non-positive pivot in an incomplete factorization, or a
    CG denominator of the wrong sign.
    """


class MatrixMarketError(ValueError):
    """Malformed Matrix Market input; carries the offending line number."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = "line %d: %s" % (lineno, message)
        super().__init__(message)
        self.lineno = lineno


def _check_vector(v, n=None, name="vector"):
    v = np.asarray(v)
    if v.ndim != 1 or v.size == 0:
        raise InvalidVector("%s must be a non-empty 1-d array, got shape %r"
                            % (name, v.shape))
    if n is not None and v.size != n:
        raise DimensionMismatch("%s has length %d, expected %d" % (name, v.size, n))
    if not np.all(np.isfinite(v)):
        raise InvalidVector("%s contains non-finite entries" % name)
    return v


class HermitianOperator:
    """Base class for Hermitian linear operators of fixed dimension ``n``."""

    def __init__(self, n, dtype):
        self.n = int(n)
        self.dtype = np.dtype(dtype)

    @property
    def shape(self):
        return (self.n, self.n)

    def apply(self, v):
        raise NotImplementedError

    def to_dense(self):
        raise NotImplementedError

    def __matmul__(self, v):
        return self.apply(v)

    def __repr__(self):
        return "%s(n=%d, dtype=%s)" % (type(self).__name__, self.n, self.dtype)


class DenseHermitianOperator(HermitianOperator):
    """Hermitian operator backed by a dense 2-d array.

    The input is validated against its conjugate transpose (relative
    tolerance ``1e-13``) and stored in exactly hermitized form, so that
    quadratic forms evaluate to real numbers up to rounding.
    """

    def __init__(self, a):
        a = np.asarray(a)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch("expected a square 2-d array, got shape %r"
                                    % (a.shape,))
        if a.size == 0:
            raise DimensionMismatch("empty matrix")
        if not np.all(np.isfinite(a)):
            raise InvalidVector("matrix contains non-finite entries")
        scale = np.abs(a).max()
        defect = np.abs(a - a.conj().T).max()
        if defect > HERMITICITY_RTOL * max(scale, 1e-300):
            raise NotHermitian("matrix is not Hermitian: max asymmetry %.3e "
                               "(scale %.3e)" % (defect, scale))
        a = 0.5 * (a + a.conj().T)
        if not np.iscomplexobj(a):
            a = a.astype(float, copy=False)
        super().__init__(a.shape[0], a.dtype)
        self.mat = a

    def apply(self, v):
        v = _check_vector(v, self.n)
        return self.mat @ v

    def to_dense(self):
        return self.mat.copy()


class SparseHermitianOperator(HermitianOperator):
    """Hermitian operator backed by a scipy sparse matrix (stored as CSR)."""

    def __init__(self, mat):
        if not sparse.issparse(mat):
            raise TypeError("expected a scipy sparse matrix")
        if mat.shape[0] != mat.shape[1]:
            raise DimensionMismatch("expected a square matrix, got shape %r"
                                    % (mat.shape,))
        mat = mat.tocsr()
        if mat.nnz and not np.all(np.isfinite(mat.data)):
            raise InvalidVector("matrix contains non-finite entries")
        scale = np.abs(mat.data).max() if mat.nnz else 0.0
        diff = (mat - mat.conj().T).tocsr()
        defect = np.abs(diff.data).max() if diff.nnz else 0.0
        if defect > HERMITICITY_RTOL * max(scale, 1e-300):
            raise NotHermitian("sparse matrix is not Hermitian: max asymmetry "
                               "%.3e (scale %.3e)" % (defect, scale))
        mat = (0.5 * (mat + mat.conj().T)).tocsr()
        mat.sum_duplicates()
        super().__init__(mat.shape[0], mat.dtype)
        self.mat = mat

    def apply(self, v):
        v = _check_vector(v, self.n)
        return self.mat @ v

    def to_dense(self):
        return np.asarray(self.mat.todense())


class DiagonalOperator(HermitianOperator):
    """Hermitian diagonal operator; the diagonal must be real."""

    def __init__(self, diag):
        diag = _check_vector(diag, name="diagonal")
        if np.iscomplexobj(diag):
            if np.abs(diag.imag).max() > HERMITICITY_RTOL * max(np.abs(diag).max(), 1e-300):
                raise NotHermitian("diagonal of a Hermitian operator must be real")
            diag = diag.real
        diag = diag.astype(float, copy=True)
        super().__init__(diag.size, diag.dtype)
        self.diag = diag

    def apply(self, v):
        v = _check_vector(v, self.n)
        return self.diag * v

    def to_dense(self):
        return np.diag(self.diag)


class IdentityOperator(HermitianOperator):
    def __init__(self, n):
        if n <= 0:
            raise DimensionMismatch("dimension must be positive")
        super().__init__(n, float)

    def apply(self, v):
        v = _check_vector(v, self.n)
        return v.copy()

    def to_dense(self):
        return np.eye(self.n)


class CountingOperator(HermitianOperator):
    """Wrapper that counts ``apply`` calls; used to audit matvec budgets."""

    def __init__(self, op):
        super().__init__(op.n, op.dtype)
        self.op = op
        self.count = 0

    def apply(self, v):
        self.count += 1
        return self.op.apply(v)

    def to_dense(self):
        # dense extraction is diagnostic-only and does not count as a matvec
        return self.op.to_dense()


def as_operator(a):
    """Coerce a dense array / sparse matrix / operator into a HermitianOperator."""
    if isinstance(a, HermitianOperator):
        return a
    if sparse.issparse(a):
        return SparseHermitianOperator(a)
    arr = np.asarray(a)
    if arr.ndim == 2:
        return DenseHermitianOperator(arr)
    raise TypeError("cannot interpret %r as a Hermitian operator" % (type(a),))


class HermitianPencil:
    """A Hermitian pencil ``(A, M)`` with ``M`` positive definite.

    ``m=None`` means the standard inner product (``M = I``).  Definiteness of
    ``M`` is checked by a handful of seeded random Rayleigh quotients, which
    catches sign errors without the cost of a factorization.

    ``known_eigenvalues`` may be attached by problem generators when the
    spectrum is available analytically; solvers never rely on it.
    """

    def __init__(self, a, m=None, check_definite=True):
        self.a = as_operator(a)
        if m is None:
            self.m = IdentityOperator(self.a.n)
        else:
            self.m = as_operator(m)
        if self.a.n != self.m.n:
            raise DimensionMismatch("A has dimension %d but M has dimension %d"
                                    % (self.a.n, self.m.n))
        if check_definite and not isinstance(self.m, IdentityOperator):
            rng = np.random.default_rng(0)
            complex_m = np.issubdtype(self.m.dtype, np.complexfloating)
            for _ in range(8):
                v = rng.standard_normal(self.n)
                if complex_m:
                    v = v + 1j * rng.standard_normal(self.n)
                q = np.vdot(v, self.m.apply(v)).real
                if not (q > 0.0 and np.isfinite(q)):
                    raise NotPositiveDefinite(
                        "M failed a positive-definiteness probe (v*Mv = %.3e)" % q)
        self.known_eigenvalues = None

    @property
    def n(self):
        return self.a.n

    def __repr__(self):
        return "HermitianPencil(n=%d, a=%s, m=%s)" % (
            self.n, type(self.a).__name__, type(self.m).__name__)


def rayleigh_quotient(pencil, x):
    """Return ``(x* A x) / (x* M x)`` for a nonzero vector ``x``."""
    x = _check_vector(x, pencil.n, name="x")
    if not np.any(x):
        raise InvalidVector("Rayleigh quotient of the zero vector is undefined")
    num = np.vdot(x, pencil.a.apply(x)).real
    den = np.vdot(x, pencil.m.apply(x)).real
    if den <= 0.0:
        raise NotPositiveDefinite("x*Mx = %.3e is not positive" % den)
    return float(num / den)


def residual(pencil, x, theta=None):
    """Eigenresidual ``A x - theta M x``; ``theta`` defaults to the Rayleigh quotient."""
    x = _check_vector(x, pencil.n, name="x")
    ax = pencil.a.apply(x)
    mx = pencil.m.apply(x)
    if theta is None:
        theta = float(np.vdot(x, ax).real / np.vdot(x, mx).real)
    return ax - theta * mx


def residual_norm(pencil, x, theta=None):
    """Normalized residual ``||A x - theta M x||_2 / ||x||_M`` (the stopping quantity)."""
    x = _check_vector(x, pencil.n, name="x")
    mx = pencil.m.apply(x)
    xm = np.vdot(x, mx).real
    if xm <= 0.0:
        raise NotPositiveDefinite("x*Mx = %.3e is not positive" % xm)
    ax = pencil.a.apply(x)
    if theta is None:
        theta = float(np.vdot(x, ax).real / xm)
    return float(np.linalg.norm(ax - theta * mx) / np.sqrt(xm))


def m_inner(m, v, w):
    """M-inner product ``v* M w`` (conjugate-linear in the first argument)."""
    v = _check_vector(v, name="v")
    w = _check_vector(w, n=v.size, name="w")
    if m is None:
        return complex(np.vdot(v, w)) if np.iscomplexobj(v) or np.iscomplexobj(w) \
            else float(np.vdot(v, w))
    m = as_operator(m)
    val = np.vdot(v, m.apply(w))
    return complex(val) if np.iscomplexobj(v) or np.iscomplexobj(w) else float(val.real)


def m_norm(m, v):
    """M-norm ``sqrt(v* M v)``; raises if the quadratic form is not positive."""
    val = m_inner(m, v, v)
    val = val.real if isinstance(val, complex) else val
    if val < 0.0:
        raise NotPositiveDefinite("v*Mv = %.3e is negative" % val)
    return float(np.sqrt(val))


def hermiticity_defect(op, probes=100, seed=0):
    """Max relative defect of ``v*(A w) - conj(w*(A v))`` over random probe pairs."""
    op = as_operator(op)
    rng = np.random.default_rng(seed)
    complex_op = np.issubdtype(op.dtype, np.complexfloating)
    worst = 0.0
    for _ in range(probes):
        v = rng.standard_normal(op.n)
        w = rng.standard_normal(op.n)
        if complex_op:
            v = v + 1j * rng.standard_normal(op.n)
            w = w + 1j * rng.standard_normal(op.n)
        lhs = np.vdot(v, op.apply(w))
        rhs = np.conj(np.vdot(w, op.apply(v)))
        scale = max(abs(lhs), abs(rhs), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


# ---------------------------------------------------------------------------
# Matrix Market reader
# ---------------------------------------------------------------------------

_MM_FIELDS = {"real", "integer", "complex", "pattern"}
_MM_SYMMETRIES = {"general", "symmetric", "hermitian", "skew-symmetric"}


def _mm_tokenize_value(tokens, field, lineno):
    try:
        if field == "complex":
            return complex(float(tokens[0]), float(tokens[1]))
        return float(tokens[0])
    except (ValueError, IndexError):
        raise MatrixMarketError("could not parse numeric value from %r"
                                % " ".join(tokens), lineno) from None


def load_matrix_market(path, symmetrize=False):
    """Read a Matrix Market file into a Hermitian operator.

    Supports ``coordinate`` and ``array`` formats with ``real``, ``integer``
    or ``complex`` fields and ``general``/``symmetric``/``hermitian``
    symmetry.  Rejects pattern files (no values), non-square matrices, and
    general files whose explicit entries are not Hermitian -- unless
    ``symmetrize=True``, in which case ``(B + B*)/2`` is used.

    Returns a ``SparseHermitianOperator`` for coordinate input and a
    ``DenseHermitianOperator`` for array input.  All errors carry the
    1-based line number of the offending line.
    """
    with open(path, "rt", encoding="latin-1") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MatrixMarketError("empty file", 1)

    header = lines[0].split()
    if len(header) != 5 or header[0] != "%%MatrixMarket":
        raise MatrixMarketError("missing %%MatrixMarket banner", 1)
    obj, fmt, field, symmetry = (tok.lower() for tok in header[1:])
    if obj != "matrix":
        raise MatrixMarketError("unsupported object %r" % obj, 1)
    if fmt not in ("coordinate", "array"):
        raise MatrixMarketError("unsupported format %r" % fmt, 1)
    if field not in _MM_FIELDS:
        raise MatrixMarketError("unsupported field %r" % field, 1)
    if field == "pattern":
        raise MatrixMarketError("pattern files carry no values; numeric values "
                                "required", 1)
    if symmetry not in _MM_SYMMETRIES:
        raise MatrixMarketError("unsupported symmetry %r" % symmetry, 1)
    if symmetry == "skew-symmetric":
        raise MatrixMarketError("skew-symmetric matrices are not Hermitian", 1)

    # walk past comments/blank lines to the size line
    idx = 1
    while idx < len(lines) and (not lines[idx].strip() or lines[idx].lstrip().startswith("%")):
        idx += 1
    if idx >= len(lines):
        raise MatrixMarketError("missing size line", len(lines))
    size_tokens = lines[idx].split()
    lineno_size = idx + 1

    complex_field = field == "complex"
    dtype = complex if complex_field else float

    if fmt == "coordinate":
        if len(size_tokens) != 3:
            raise MatrixMarketError("coordinate size line must be 'rows cols nnz'",
                                    lineno_size)
        try:
            nrows, ncols, nnz = (int(t) for t in size_tokens)
        except ValueError:
            raise MatrixMarketError("could not parse size line %r" % lines[idx],
                                    lineno_size) from None
        if nrows != ncols:
            raise MatrixMarketError("matrix is %d x %d; the eigensolver requires "
                                    "a square matrix" % (nrows, ncols), lineno_size)
        rows, cols, vals = [], [], []
        seen = 0
        for off in range(idx + 1, len(lines)):
            raw = lines[off].strip()
            if not raw or raw.startswith("%"):
                continue
            lineno = off + 1
            tokens = raw.split()
            if len(tokens) < 3:
                raise MatrixMarketError("entry line needs 'i j value'", lineno)
            try:
                i, j = int(tokens[0]), int(tokens[1])
            except ValueError:
                raise MatrixMarketError("could not parse indices from %r" % raw,
                                        lineno) from None
            if not (1 <= i <= nrows and 1 <= j <= ncols):
                raise MatrixMarketError("index (%d, %d) outside %d x %d matrix"
                                        % (i, j, nrows, ncols), lineno)
            val = _mm_tokenize_value(tokens[2:], field, lineno)
            rows.append(i - 1)
            cols.append(j - 1)
            vals.append(val)
            if symmetry in ("symmetric", "hermitian") and i != j:
                rows.append(j - 1)
                cols.append(i - 1)
                vals.append(np.conj(val) if symmetry == "hermitian" else val)
            seen += 1
            if seen > nnz:
                raise MatrixMarketError("more entries than the declared %d" % nnz,
                                        lineno)
        if seen < nnz:
            raise MatrixMarketError("expected %d entries but found %d"
                                    % (nnz, seen), len(lines))
        mat = sparse.coo_matrix((np.array(vals, dtype=dtype),
                                 (np.array(rows), np.array(cols))),
                                shape=(nrows, ncols)).tocsr()
        return _finish_mm(mat, symmetry, symmetrize, sparse_out=True)

    # array format: column-major dense values
    if len(size_tokens) != 2:
        raise MatrixMarketError("array size line must be 'rows cols'", lineno_size)
    try:
        nrows, ncols = (int(t) for t in size_tokens)
    except ValueError:
        raise MatrixMarketError("could not parse size line %r" % lines[idx],
                                lineno_size) from None
    if nrows != ncols:
        raise MatrixMarketError("matrix is %d x %d; the eigensolver requires "
                                "a square matrix" % (nrows, ncols), lineno_size)
    if symmetry == "general":
        expected = nrows * ncols
    else:
        expected = nrows * (nrows + 1) // 2
    mat = np.zeros((nrows, ncols), dtype=dtype)
    # column-major fill; symmetric/hermitian store the lower triangle per column
    count = 0
    positions = []
    if symmetry == "general":
        for j in range(ncols):
            for i in range(nrows):
                positions.append((i, j))
    else:
        for j in range(ncols):
            for i in range(j, nrows):
                positions.append((i, j))
    for off in range(idx + 1, len(lines)):
        raw = lines[off].strip()
        if not raw or raw.startswith("%"):
            continue
        lineno = off + 1
        if count >= expected:
            raise MatrixMarketError("more values than the declared shape holds",
                                    lineno)
        tokens = raw.split()
        val = _mm_tokenize_value(tokens, field, lineno)
        i, j = positions[count]
        mat[i, j] = val
        if symmetry in ("symmetric", "hermitian") and i != j:
            mat[j, i] = np.conj(val) if symmetry == "hermitian" else val
        count += 1
    if count < expected:
        raise MatrixMarketError("expected %d values but found %d"
                                % (expected, count), len(lines))
    return _finish_mm(mat, symmetry, symmetrize, sparse_out=False)


def _finish_mm(mat, symmetry, symmetrize, sparse_out):
    if symmetry == "general":
        if sparse_out:
            diff = (mat - mat.conj().T).tocsr()
            defect = np.abs(diff.data).max() if diff.nnz else 0.0
            scale = np.abs(mat.data).max() if mat.nnz else 0.0
        else:
            defect = np.abs(mat - mat.conj().T).max()
            scale = np.abs(mat).max()
        if defect > 1e-10 * max(scale, 1e-300):
            if not symmetrize:
                raise MatrixMarketError(
                    "general matrix is not Hermitian (max asymmetry %.3e); "
                    "pass symmetrize=True to use (B + B*)/2" % defect)
            mat = 0.5 * (mat + mat.conj().T)
    if sparse_out:
        return SparseHermitianOperator(mat)
    return DenseHermitianOperator(mat)
