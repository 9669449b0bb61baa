"""Test problem generators, spectral transformations and dense oracles.

The generators return ready-to-solve pencils, attaching analytically known
eigenvalues where available (solvers never look at them; tests do).  The
transformation helpers rewrite the common non-canonical eigenvalue problems
-- shifted definite pencils, interior targets via folding, definite
matrices on either side, and the paired-block structure of linear-response
problems -- into the canonical form (A, M) with M positive definite and the
eigenvalue of interest at the bottom of the spectrum, together with the map
back to the original eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sparse
import scipy.sparse.linalg as sparse_linalg

from .linops import (
    DenseHermitianOperator,
    HermitianOperator,
    HermitianPencil,
    NotPositiveDefinite,
    SparseHermitianOperator,
    as_operator,
    load_matrix_market,
    _check_vector,
)

__all__ = [
    "gen_diag",
    "gen_laplace1d",
    "gen_laplace2d",
    "gen_slit2d",
    "load_problem_matrix_market",
    "dense_oracle",
    "reference_smallest",
    "TransformResult",
    "transform_shift_definite",
    "transform_interior_folded",
    "transform_definite_pencil",
    "transform_linear_response",
]

ORACLE_SIZE_CAP = 512
TRANSFORM_SIZE_CAP = 2048


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def gen_diag(values, m_diag=None):
    """Diagonal pencil with the prescribed (non-decreasing) spectrum."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size < 2:
        raise ValueError("need at least two eigenvalues")
    if np.any(np.diff(values) < 0.0):
        raise ValueError("eigenvalues must be in non-decreasing order")
    if m_diag is None:
        pencil = HermitianPencil(np.diag(values))
        pencil.known_eigenvalues = values.copy()
    else:
        m_diag = np.asarray(m_diag, dtype=float)
        if np.any(m_diag <= 0.0):
            raise NotPositiveDefinite("mass diagonal must be positive")
        pencil = HermitianPencil(np.diag(values * m_diag), np.diag(m_diag))
        pencil.known_eigenvalues = values.copy()
    return pencil


def gen_laplace1d(n):
    """1-d Dirichlet Laplacian stencil [-1, 2, -1] on n interior points;
    eigenvalues 2 - 2 cos(k pi / (n+1))."""
    if n < 2:
        raise ValueError("need at least two interior points")
    main = 2.0 * np.ones(n)
    off = -np.ones(n - 1)
    mat = sparse.diags([off, main, off], [-1, 0, 1], format="csr")
    pencil = HermitianPencil(SparseHermitianOperator(mat))
    k = np.arange(1, n + 1)
    pencil.known_eigenvalues = np.sort(2.0 - 2.0 * np.cos(k * np.pi / (n + 1)))
    return pencil


def gen_laplace2d(nx, ny, widths=(1.0, 1.0)):
    """5-point Dirichlet Laplacian on an (nx x ny) interior grid over a
    rectangle of the given widths, scaled by the grid spacings."""
    if nx < 2 or ny < 2:
        raise ValueError("grid must be at least 2 x 2")
    wx, wy = widths
    hx = wx / (nx + 1)
    hy = wy / (ny + 1)
    tx = sparse.diags([-np.ones(nx - 1), 2.0 * np.ones(nx), -np.ones(nx - 1)],
                      [-1, 0, 1]) / hx ** 2
    ty = sparse.diags([-np.ones(ny - 1), 2.0 * np.ones(ny), -np.ones(ny - 1)],
                      [-1, 0, 1]) / hy ** 2
    mat = sparse.kron(sparse.identity(ny), tx) + sparse.kron(ty, sparse.identity(nx))
    pencil = HermitianPencil(SparseHermitianOperator(mat.tocsr()))
    ex = (2.0 - 2.0 * np.cos(np.arange(1, nx + 1) * np.pi / (nx + 1))) / hx ** 2
    ey = (2.0 - 2.0 * np.cos(np.arange(1, ny + 1) * np.pi / (ny + 1))) / hy ** 2
    pencil.known_eigenvalues = np.sort((ex[None, :] + ey[:, None]).ravel())
    return pencil


def gen_slit2d(nx, ny, slit=(0.1, 0.9)):
    """Dirichlet Laplacian on the slit rectangle [0,2] x [0,1].

    The slit is the vertical segment {x = 1} x [slit[0], slit[1]].  The grid
    has ``nx`` by ``ny`` cells, so ``nx`` must be even for a node column to
    sit exactly on the line x = 1; nodes on that column whose height falls
    inside the slit extent are removed from the unknowns (the slit is a
    Dirichlet boundary), which decouples the two sides there.  An empty
    extent (``slit[0] >= slit[1]``) leaves the plain rectangle; a full-height
    slit splits the domain into two mirror halves with an exactly doubly
    degenerate bottom eigenvalue.  Partial slits give the tightly clustered
    (but simple) smallest pair that makes this a standard hard test for
    single-vector solvers.
    """
    if nx < 4 or ny < 2:
        raise ValueError("degenerate grid: need nx >= 4, ny >= 2")
    if nx % 2 != 0:
        raise ValueError("nx must be even so a node column sits on the slit "
                         "line x=1")
    lo, hi = float(slit[0]), float(slit[1])
    hx = 2.0 / nx
    hy = 1.0 / ny
    cx = 1.0 / hx ** 2
    cy = 1.0 / hy ** 2
    slit_col = nx // 2

    index = {}
    for j in range(1, ny):
        for i in range(1, nx):
            if i == slit_col and lo < hi and lo <= j * hy <= hi:
                continue
            index[(i, j)] = len(index)
    n = len(index)

    rows, cols, vals = [], [], []
    for (i, j), k in index.items():
        rows.append(k)
        cols.append(k)
        vals.append(2.0 * cx + 2.0 * cy)
        for di, dj, c in ((1, 0, cx), (0, 1, cy)):
            k2 = index.get((i + di, j + dj))
            if k2 is not None:
                rows.extend((k, k2))
                cols.extend((k2, k))
                vals.extend((-c, -c))
    mat = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    pencil = HermitianPencil(SparseHermitianOperator(mat))
    pencil.known_eigenvalues = None
    return pencil


def load_problem_matrix_market(spec):
    """Pencil from Matrix Market files: ``path`` for A, optional ``mass_path``
    for M (identity metric when absent)."""
    symmetrize = bool(spec.get("symmetrize", False))
    a = load_matrix_market(spec["path"], symmetrize=symmetrize)
    m = None
    if spec.get("mass_path"):
        m = load_matrix_market(spec["mass_path"], symmetrize=symmetrize)
    return HermitianPencil(a, m)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def dense_oracle(pencil, size_cap=ORACLE_SIZE_CAP):
    """Full spectrum of a desk-scale pencil: ascending eigenvalues and
    M-orthonormal eigenvectors, by dense factorization."""
    if pencil.n > size_cap:
        raise ValueError("dense oracle refused: n=%d exceeds cap %d "
                         "(pass size_cap explicitly for a one-off)"
                         % (pencil.n, size_cap))
    a = pencil.a.to_dense()
    m = pencil.m.to_dense()
    try:
        vals, vecs = scipy.linalg.eigh(a, m)
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("mass matrix is not positive definite: %s"
                                  % exc) from None
    return vals, vecs


def reference_smallest(pencil, k=2, size_cap=ORACLE_SIZE_CAP):
    """The k smallest eigenvalues; dense below the cap, shift-invert Lanczos
    above it (sparse problems only)."""
    if pencil.n <= size_cap:
        vals, _ = dense_oracle(pencil, size_cap=size_cap)
        return vals[:k]
    mat = getattr(pencil.a, "mat", None)
    if mat is None or not sparse.issparse(mat):
        raise ValueError("iterative reference needs a sparse operator")
    from .linops import IdentityOperator
    m_mat = None
    if not isinstance(pencil.m, IdentityOperator):
        m_mat = getattr(pencil.m, "mat", None)
        if m_mat is None:
            raise ValueError("iterative reference needs a sparse mass matrix")
    vals = sparse_linalg.eigsh(mat, k=k, M=m_mat, sigma=0.0, which="LM",
                               return_eigenvectors=False)
    return np.sort(vals)


# ---------------------------------------------------------------------------
# canonical-form transformations
# ---------------------------------------------------------------------------

class _DenseSolveOperator(HermitianOperator):
    """Inverse of a dense SPD matrix as an operator (Cholesky-backed)."""

    def __init__(self, mat, label="matrix"):
        mat = np.asarray(mat)
        mat = 0.5 * (mat + mat.conj().T)
        try:
            self._factor = scipy.linalg.cho_factor(mat, lower=True)
        except scipy.linalg.LinAlgError:
            raise NotPositiveDefinite("%s is not positive definite" % label) \
                from None
        super().__init__(mat.shape[0], mat.dtype)

    def apply(self, v):
        v = _check_vector(v, self.n)
        return scipy.linalg.cho_solve(self._factor, v)

    def to_dense(self):
        inv = scipy.linalg.cho_solve(self._factor,
                                     np.eye(self.n, dtype=self.dtype))
        return 0.5 * (inv + inv.conj().T)


class _FoldedOperator(HermitianOperator):
    """K = Lt S^{-1} Lt for Hermitian Lt and SPD S (applied factor-wise)."""

    def __init__(self, lt, s_inv):
        super().__init__(lt.n, np.result_type(lt.dtype, s_inv.dtype))
        self._lt = lt
        self._s_inv = s_inv

    def apply(self, v):
        v = _check_vector(v, self.n)
        return self._lt.apply(self._s_inv.apply(self._lt.apply(v)))

    def to_dense(self):
        lt = self._lt.to_dense()
        k = lt @ (self._s_inv.to_dense() @ lt)
        return 0.5 * (k + k.conj().T)


def _definiteness(op, probes=8, seed=0):
    """'positive' / 'negative' / 'indefinite' by random quadratic forms plus
    the extreme diagonal entries (cheap certificates, exact on diagonals)."""
    rng = np.random.default_rng(seed)
    signs = []
    complex_op = np.issubdtype(op.dtype, np.complexfloating)
    for _ in range(probes):
        v = rng.standard_normal(op.n)
        if complex_op:
            v = v + 1j * rng.standard_normal(op.n)
        signs.append(np.vdot(v, op.apply(v)).real)
    diag = np.diag(op.to_dense()).real if op.n <= TRANSFORM_SIZE_CAP else []
    signs.extend(diag)
    signs = np.asarray(signs)
    if np.all(signs > 0.0):
        return "positive"
    if np.all(signs < 0.0):
        return "negative"
    return "indefinite"


@dataclass
class TransformResult:
    """A canonical pencil plus the eigenvalue map back to the original problem.

    ``to_original(theta, u=None)`` maps a canonical eigenvalue; the folded
    interior transform needs the eigenvector to decide on which side of the
    shift the original eigenvalue lies.  ``spectrum_to_original`` maps a
    whole canonical spectrum (with eigenvector columns where required).
    """

    pencil: HermitianPencil
    kind: str
    sigma: float
    params: dict = field(default_factory=dict)

    def to_original(self, theta, u=None):
        kind = self.kind
        if kind == "shift-definite":
            return self.sigma + theta
        if kind == "interior-folded":
            if theta < 0.0:
                theta = 0.0 if theta > -1e-10 * max(abs(self.sigma), 1.0) \
                    else theta
            if theta < 0.0:
                raise ValueError("folded eigenvalue %.6g is negative" % theta)
            root = np.sqrt(theta)
            if u is None:
                raise ValueError("the folded transform needs the eigenvector "
                                 "to recover the sign of lambda - sigma")
            lt = self.params["lt"]
            s = self.params["s"]
            num = np.vdot(u, lt.apply(u)).real
            den = np.vdot(u, s.apply(u)).real
            side = 1.0 if num / den >= 0.0 else -1.0
            return self.sigma + side * root
        if kind in ("interior-split-above", "interior-split-below",
                    "definite-pencil-inverse"):
            if theta == 0.0:
                raise ValueError("zero canonical eigenvalue has no preimage")
            if kind == "interior-split-below":
                return self.sigma + 1.0 / theta
            return self.sigma - 1.0 / theta
        if kind == "linear-response":
            if theta < -1e-10:
                raise ValueError("squared excitation %.6g is negative" % theta)
            return float(np.sqrt(max(theta, 0.0)))
        if kind == "linear-response-block":
            if theta == 0.0:
                raise ValueError("zero canonical eigenvalue has no preimage")
            return -1.0 / theta
        raise ValueError("unknown transform kind %r" % kind)

    def spectrum_to_original(self, thetas, vecs=None):
        out = []
        for j, th in enumerate(np.asarray(thetas, dtype=float)):
            u = None if vecs is None else vecs[:, j]
            out.append(self.to_original(th, u=u))
        return np.asarray(out)


def transform_shift_definite(l, s, sigma):
    """Pencil (L - sigma S, S) for SPD S; original lambda = theta + sigma.

    The plain reduction for problems already carrying a definite S: shifting
    moves the target eigenvalue to the bottom without changing eigenvectors.
    """
    l = as_operator(l)
    s = as_operator(s)
    if l.n != s.n:
        raise ValueError("operator dimensions differ")
    shifted = _combine_shift(l, s, sigma)
    pencil = HermitianPencil(shifted, s)
    return TransformResult(pencil=pencil, kind="shift-definite",
                           sigma=float(sigma))


def _combine_shift(l, s, sigma):
    """L - sigma*S keeping sparse storage when both sides are sparse."""
    l_mat = getattr(l, "mat", None)
    s_mat = getattr(s, "mat", None)
    if sigma == 0.0:
        return l
    if l_mat is not None and sparse.issparse(l_mat):
        if s_mat is not None and sparse.issparse(s_mat):
            return SparseHermitianOperator((l_mat - sigma * s_mat).tocsr())
        return DenseHermitianOperator(l.to_dense() - sigma * s.to_dense())
    return DenseHermitianOperator(l.to_dense() - sigma * s.to_dense())


def transform_interior_folded(l, s, sigma, sign_split=None):
    """Target the eigenvalue nearest an interior shift by spectral folding.

    With ``sign_split=None`` the canonical pencil is ``(K, S)``,
    ``K = (L - sigma S) S^{-1} (L - sigma S)``, whose eigenvalues are
    ``(lambda - sigma)^2``; the side of the shift is recovered from the
    eigenvector.  With ``sign_split='above'`` (or ``'below'``) the pencil
    ``(-(L - sigma S), K)`` (resp. ``(+..., K)``) is returned instead, whose
    *smallest* eigenvalue corresponds to the original eigenvalue
    immediately above (below) the shift; the map is
    ``lambda = sigma -+ 1/theta``.
    """
    l = as_operator(l)
    s = as_operator(s)
    if l.n != s.n:
        raise ValueError("operator dimensions differ")
    if l.n > TRANSFORM_SIZE_CAP:
        raise ValueError("folded transform is factorization-based; n=%d "
                         "exceeds cap %d" % (l.n, TRANSFORM_SIZE_CAP))
    if sign_split not in (None, "above", "below"):
        raise ValueError("sign_split must be None, 'above' or 'below'")
    lt = _combine_shift(l, s, sigma)
    s_inv = _DenseSolveOperator(s.to_dense(), label="S")
    folded = _FoldedOperator(lt, s_inv)
    if sign_split is None:
        pencil = HermitianPencil(folded, s)
        return TransformResult(pencil=pencil, kind="interior-folded",
                               sigma=float(sigma), params={"lt": lt, "s": s})
    if sign_split == "above":
        a_side = DenseHermitianOperator(-lt.to_dense())
        kind = "interior-split-above"
    else:
        a_side = lt
        kind = "interior-split-below"
    pencil = HermitianPencil(a_side, folded)
    return TransformResult(pencil=pencil, kind=kind, sigma=float(sigma),
                           params={"lt": lt, "s": s})


def transform_definite_pencil(l, s, sigma=0.0):
    """Canonical form when ``L - sigma S`` is definite but S need not be.

    * shifted matrix positive definite, S positive definite: plain shifted
      pencil (theta = lambda - sigma);
    * shifted matrix positive definite, S indefinite: pencil
      ``(-S, L - sigma S)`` with map ``lambda = sigma - 1/theta``;
    * shifted matrix negative definite: pencil ``(S, -(L - sigma S))`` with
      the same map.

    Raises NotPositiveDefinite when the shifted matrix is indefinite.
    """
    l = as_operator(l)
    s = as_operator(s)
    if l.n != s.n:
        raise ValueError("operator dimensions differ")
    lt = _combine_shift(l, s, sigma)
    kind_lt = _definiteness(lt)
    if kind_lt == "indefinite":
        raise NotPositiveDefinite(
            "L - sigma S is indefinite; no definite reformulation exists for "
            "this shift")
    if kind_lt == "positive":
        if _definiteness(s) == "positive":
            return transform_shift_definite(l, s, sigma)
        neg_s = DenseHermitianOperator(-s.to_dense()) \
            if not sparse.issparse(getattr(s, "mat", None)) \
            else SparseHermitianOperator(-s.mat)
        pencil = HermitianPencil(neg_s, lt)
        return TransformResult(pencil=pencil, kind="definite-pencil-inverse",
                               sigma=float(sigma))
    # negative definite shifted matrix
    neg_lt = DenseHermitianOperator(-lt.to_dense()) \
        if not sparse.issparse(getattr(lt, "mat", None)) \
        else SparseHermitianOperator(-lt.mat)
    pencil = HermitianPencil(s, neg_lt)
    return TransformResult(pencil=pencil, kind="definite-pencil-inverse",
                           sigma=float(sigma))


def transform_linear_response(l_half, s_half, form="inverse-pair"):
    """Canonical forms for the paired-block (excitation-energy) structure.

    The underlying problem couples two Hermitian blocks ``Lt`` and ``St``
    whose product carries the squared excitation energies ``t^2``.

    * ``form='inverse-pair'``: pencil ``(St, Lt^{-1})`` (or the swap if only
      St is definite); canonical eigenvalues are ``t^2`` and the map returns
      ``t = sqrt(theta)``.
    * ``form='block-pencil'``: the doubled pencil ``(-J, blkdiag(Lt, St))``
      with ``J`` the antidiagonal identity coupling; canonical eigenvalues
      are ``-1/t`` over both signs of t, so the smallest maps to the
      smallest positive excitation via ``t = -1/theta``.  Both blocks must
      be definite.
    """
    lt = as_operator(l_half)
    st = as_operator(s_half)
    if lt.n != st.n:
        raise ValueError("block dimensions differ")
    if form == "inverse-pair":
        if _definiteness(lt) == "positive":
            inv = _DenseSolveOperator(lt.to_dense(), label="Lt")
            pencil = HermitianPencil(st, inv)
        elif _definiteness(st) == "positive":
            inv = _DenseSolveOperator(st.to_dense(), label="St")
            pencil = HermitianPencil(lt, inv)
        else:
            raise NotPositiveDefinite(
                "linear-response reduction needs at least one definite block")
        return TransformResult(pencil=pencil, kind="linear-response",
                               sigma=0.0)
    if form == "block-pencil":
        if _definiteness(lt) != "positive" or _definiteness(st) != "positive":
            raise NotPositiveDefinite("block-pencil form needs both blocks "
                                      "positive definite")
        n = lt.n
        big = np.zeros((2 * n, 2 * n), dtype=np.result_type(lt.dtype, st.dtype))
        big[:n, :n] = lt.to_dense()
        big[n:, n:] = st.to_dense()
        coupling = np.zeros_like(big)
        coupling[:n, n:] = np.eye(n)
        coupling[n:, :n] = np.eye(n)
        pencil = HermitianPencil(DenseHermitianOperator(-coupling),
                                 DenseHermitianOperator(big))
        return TransformResult(pencil=pencil, kind="linear-response-block",
                               sigma=0.0)
    raise ValueError("form must be 'inverse-pair' or 'block-pencil'")
