"""Weighted Rayleigh-Ritz extraction on small trial subspaces.

The solvers in this package never normalize their iterates inside the
recurrence; instead every step solves a k-dimensional projected eigenvalue
problem and rescales the minimizing coefficient vector so that the
coefficient on the current iterate ``x`` equals one.  The next iterate is
then literally ``x`` plus a correction from the remaining basis vectors,
which keeps the familiar CG update form ``x + delta p`` intact while being
invariant to the (possibly extreme) scaling of the basis.

The projected problem itself is solved by a self-contained dense routine:
Cholesky of the Gram matrix of the metric, followed by a cyclic Jacobi
iteration on the transformed matrix.  Jacobi is slow compared to LAPACK but
perfectly adequate at k <= 64, is accurate for strongly graded matrices
(which unnormalized bases produce), and keeps this kernel dependency-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linops import (
    DimensionMismatch,
    InvalidVector,
    NumericalBreakdown,
    as_operator,
)

__all__ = [
    "GramConditioningError",
    "DegenerateSubspace",
    "TrialBasis",
    "RitzOutput",
    "small_dense_eigensolve",
    "rrw",
    "m_orthogonalize_with_reduction",
]

# Coefficient on the anchor below this fraction of the largest coefficient is
# treated as zero, triggering the plain-Ritz fallback.
ANCHOR_COEFF_TOL = 1e-14

# Eigenvalues within this relative distance of the smallest Ritz value count
# as tied; ties are broken toward the eigenvector with the largest anchor
# coefficient.
TIE_RTOL = 1e-12

MAX_JACOBI_SWEEPS = 64


class GramConditioningError(NumericalBreakdown):
    """The Gram matrix of the metric admits no (numerical) Cholesky factor."""


class DegenerateSubspace(NumericalBreakdown):
    """Even the two-vector fallback subspace was numerically dependent."""


@dataclass
class TrialBasis:
    """An ordered trial basis; ``vectors[0]`` is the anchor iterate ``x``.

    ``av``/``mv`` optionally carry precomputed products ``A v`` and ``M v``
    aligned with ``vectors``; the solvers maintain these caches so a full
    Ritz step costs no extra operator applications.
    """

    vectors: list
    av: list | None = None
    mv: list | None = None
    labels: list | None = None

    def __post_init__(self):
        k = len(self.vectors)
        if not 2 <= k <= 5:
            raise InvalidVector("trial basis needs 2..5 vectors, got %d" % k)
        n = np.asarray(self.vectors[0]).size
        for v in self.vectors:
            v = np.asarray(v)
            if v.ndim != 1 or v.size != n:
                raise DimensionMismatch("trial basis vectors must share one length")
            if not np.all(np.isfinite(v)):
                raise InvalidVector("trial basis vector has non-finite entries")
            if not np.any(v):
                raise InvalidVector("trial basis contains a zero vector")
        for cache in (self.av, self.mv):
            if cache is not None and len(cache) != k:
                raise DimensionMismatch("product cache length does not match basis")


@dataclass
class RitzOutput:
    """Result of one weighted Rayleigh-Ritz step."""

    x_next: np.ndarray
    theta_next: float
    coefficients: np.ndarray        # in terms of the (possibly reduced) basis
    used: tuple                     # indices of the input basis that survived
    gram_diag: tuple                # real diagonal of the metric Gram matrix
    events: tuple = ()
    ax_next: np.ndarray | None = None
    mx_next: np.ndarray | None = None
    ritz_values: np.ndarray | None = None


def _cholesky_lower(m):
    """Hand-rolled Cholesky ``m = L L*`` for a small Hermitian matrix.

    Raises GramConditioningError when a pivot is non-positive or negligible
    relative to the corresponding diagonal entry, which is how near-linear
    dependence of the trial basis announces itself.
    """
    k = m.shape[0]
    lower = np.zeros_like(m)
    for j in range(k):
        djj = m[j, j].real
        if not np.isfinite(djj) or djj <= 0.0:
            raise GramConditioningError(
                "Gram matrix diagonal %d is %.3e; basis vector is degenerate"
                % (j, djj))
        d = djj - np.real(np.vdot(lower[j, :j], lower[j, :j]))
        # a truly dependent column leaves a pivot of pure cancellation noise,
        # roughly eps * djj of either sign, so the cutoff must sit above that
        if not np.isfinite(d) or d <= 1e-14 * djj:
            raise GramConditioningError(
                "Cholesky pivot %d collapsed (%.3e of diagonal %.3e); trial "
                "basis is numerically dependent" % (j, d, djj))
        lower[j, j] = np.sqrt(d)
        if j + 1 < k:
            lower[j + 1:, j] = (m[j + 1:, j]
                                - lower[j + 1:, :j] @ lower[j, :j].conj()) / lower[j, j]
    return lower


def _solve_lower(lower, b):
    """Forward substitution ``lower @ x = b`` (b may be a matrix)."""
    x = np.array(b, dtype=np.result_type(lower, b), copy=True)
    for i in range(lower.shape[0]):
        if i:
            x[i] -= lower[i, :i] @ x[:i]
        x[i] /= lower[i, i]
    return x


def _solve_upper(upper, b):
    """Back substitution ``upper @ x = b``."""
    k = upper.shape[0]
    x = np.array(b, dtype=np.result_type(upper, b), copy=True)
    for i in range(k - 1, -1, -1):
        if i + 1 < k:
            x[i] -= upper[i, i + 1:] @ x[i + 1:]
        x[i] /= upper[i, i]
    return x


def _jacobi_eigh(c):
    """Cyclic Jacobi for a small Hermitian matrix: returns (values, vectors).

    Complex entries are handled by folding a phase rotation into each plane
    rotation.  Rotations are skipped with a *relative* criterion
    ``|c_pq|^2 <= tol |c_pp c_qq|`` so strongly graded matrices converge to
    small eigenvalues at full relative accuracy.
    """
    k = c.shape[0]
    a = np.array(c)
    a = 0.5 * (a + a.conj().T)
    vecs = np.eye(k, dtype=a.dtype)
    if k == 1:
        return a.real.diagonal().copy(), vecs
    for _ in range(MAX_JACOBI_SWEEPS):
        rotated = False
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = a[p, q]
                ab = abs(apq)
                if ab == 0.0:
                    continue
                app = a[p, p].real
                aqq = a[q, q].real
                if ab * ab <= 1e-32 * abs(app * aqq):
                    continue
                rotated = True
                ph = apq / ab  # unit phase making the pivot real
                tau = (aqq - app) / (2.0 * ab)
                t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau)) if tau != 0 \
                    else 1.0
                cth = 1.0 / np.sqrt(1.0 + t * t)
                sth = t * cth
                # column update with U = [[c, s], [-s conj(ph)... ]] folded in
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = cth * cp - sth * np.conj(ph) * cq
                a[:, q] = sth * cp + cth * np.conj(ph) * cq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = cth * rp - sth * ph * rq
                a[q, :] = sth * rp + cth * ph * rq
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
                vp = vecs[:, p].copy()
                vq = vecs[:, q].copy()
                vecs[:, p] = cth * vp - sth * np.conj(ph) * vq
                vecs[:, q] = sth * vp + cth * np.conj(ph) * vq
        if not rotated:
            break
    else:
        raise NumericalBreakdown("Jacobi eigensolve did not converge in %d sweeps"
                                 % MAX_JACOBI_SWEEPS)
    return a.real.diagonal().copy(), vecs


def small_dense_eigensolve(gram_a, gram_m):
    """Solve the small Hermitian pencil ``(gram_a, gram_m)``.

    Returns eigenvalues in ascending order and eigenvectors as columns,
    normalized so that ``Y* gram_m Y = I``.  Raises GramConditioningError
    when ``gram_m`` has no Cholesky factorization.
    """
    ga = np.atleast_2d(np.asarray(gram_a))
    gm = np.atleast_2d(np.asarray(gram_m))
    if ga.shape != gm.shape or ga.shape[0] != ga.shape[1]:
        raise DimensionMismatch("Gram matrices must be square and equally sized")
    if not (np.all(np.isfinite(ga)) and np.all(np.isfinite(gm))):
        raise NumericalBreakdown("non-finite entries in Gram matrices")
    ga = 0.5 * (ga + ga.conj().T)
    gm = 0.5 * (gm + gm.conj().T)
    lower = _cholesky_lower(gm)
    # C = L^{-1} A L^{-*}, Hermitian with the same eigenvalues
    tmp = _solve_lower(lower, ga)
    c = _solve_lower(lower, tmp.conj().T).conj().T
    vals, vecs = _jacobi_eigh(c)
    y = _solve_upper(lower.conj().T, vecs)
    order = np.argsort(vals, kind="stable")
    return vals[order], y[:, order]


def _pick_smallest(vals, vecs):
    """Index of the target Ritz pair; near-ties go to the vector leaning
    most heavily on the anchor (first basis vector)."""
    scale = max(np.abs(vals).max(), 1e-300)
    tie = np.flatnonzero(vals <= vals[0] + TIE_RTOL * scale)
    if tie.size == 1:
        return int(tie[0])
    weights = np.abs(vecs[0, tie])
    return int(tie[np.argmax(weights)])


def _assemble_grams(pencil, vectors, av, mv):
    k = len(vectors)
    if av is None:
        av = [pencil.a.apply(v) for v in vectors]
    if mv is None:
        mv = [pencil.m.apply(v) for v in vectors]
    dtype = np.result_type(*[v.dtype for v in vectors])
    ga = np.empty((k, k), dtype=np.result_type(dtype, float))
    gm = np.empty_like(ga)
    for i in range(k):
        for j in range(i, k):
            ga[i, j] = np.vdot(vectors[i], av[j])
            gm[i, j] = np.vdot(vectors[i], mv[j])
            if i != j:
                ga[j, i] = np.conj(ga[i, j])
                gm[j, i] = np.conj(gm[i, j])
    return ga, gm, av, mv


def rrw(pencil, basis):
    """One weighted Rayleigh-Ritz step over ``span(basis)``.

    ``basis`` is a TrialBasis (or a bare sequence of vectors, in which case
    products are computed on the fly; the accumulating diagnostic solver uses
    this to exceed the usual 5-vector limit).  The step returns the new
    iterate ``x + sum c_j u_j`` with the anchor coefficient scaled to one.
    If the minimizing eigenvector has (numerically) zero anchor coefficient
    the plain Ritz vector of unit M-norm is returned instead and the event
    is recorded.  A Gram breakdown on the full basis triggers one retry on
    the leading two vectors before giving up.
    """
    if isinstance(basis, TrialBasis):
        vectors, av, mv = basis.vectors, basis.av, basis.mv
    else:
        vectors = list(basis)
        if len(vectors) < 2:
            raise InvalidVector("trial basis needs at least 2 vectors")
        av = mv = None
    ga, gm, av, mv = _assemble_grams(pencil, vectors, av, mv)

    # Solve the projected problem on unit-M-norm columns: the span, the
    # anchored combination and the Ritz values are unchanged, but the Gram
    # conditioning drops from (scale ratio)^2 to the pure angle geometry,
    # which is what keeps the late iterations from bouncing.
    diag = gm.diagonal().real
    scale = np.where(diag > 0.0, np.sqrt(np.maximum(diag, 1e-300)), 1.0)
    d_inv = 1.0 / scale
    ga_s = ga * np.outer(d_inv, d_inv)
    gm_s = gm * np.outer(d_inv, d_inv)

    used = tuple(range(len(vectors)))
    events = []
    try:
        vals, vecs = small_dense_eigensolve(ga_s, gm_s)
    except GramConditioningError:
        if len(vectors) == 2:
            raise DegenerateSubspace(
                "two-vector trial basis is numerically dependent") from None
        used = (0, 1)
        events.append("reduce-to-xw")
        try:
            vals, vecs = small_dense_eigensolve(ga_s[:2, :2], gm_s[:2, :2])
        except GramConditioningError:
            raise DegenerateSubspace(
                "trial basis reduction to {x, w} still degenerate") from None
        vectors = vectors[:2]
        av = av[:2]
        mv = mv[:2]
        d_inv = d_inv[:2]

    pick = _pick_smallest(vals, vecs)
    y = vecs[:, pick] * d_inv[: vecs.shape[0]]
    theta = float(vals[pick])

    anchor = y[0]
    if abs(anchor) <= ANCHOR_COEFF_TOL * np.abs(y).max():
        # anchor dropped out of the minimizer: fall back to the plain Ritz
        # vector with unit M-norm
        coeffs = y.copy()
        events.append("unweighted-ritz")
    else:
        coeffs = y / anchor
    x_next = sum(c * v for c, v in zip(coeffs, vectors))
    ax_next = sum(c * v for c, v in zip(coeffs, av))
    mx_next = sum(c * v for c, v in zip(coeffs, mv))
    if "unweighted-ritz" in events:
        nrm = np.sqrt(np.vdot(x_next, mx_next).real)
        if not (np.isfinite(nrm) and nrm > 0.0):
            raise DegenerateSubspace("Ritz vector has non-positive M-norm")
        x_next = x_next / nrm
        ax_next = ax_next / nrm
        mx_next = mx_next / nrm
        coeffs = coeffs / nrm
    if not np.all(np.isfinite(x_next)):
        raise NumericalBreakdown("non-finite Ritz iterate")

    return RitzOutput(
        x_next=x_next,
        theta_next=theta,
        coefficients=coeffs,
        used=used,
        gram_diag=tuple(gm.diagonal().real[: len(vectors)]),
        events=tuple(events),
        ax_next=ax_next,
        mx_next=mx_next,
        ritz_values=vals,
    )


def m_orthogonalize_with_reduction(m, basis, gamma=1e26):
    """Unnormalized modified Gram-Schmidt in the M-inner product, with the
    conditioning-driven basis reduction used by the anchored solver.

    The vectors are orthogonalized in order without normalization, giving a
    Gram diagonal ``delta_1 >= ... >= delta_k`` in the generic decaying case.
    If ``delta_1 > gamma * delta_3`` the basis is cut to its first two
    vectors; if instead (for four vectors) ``delta_1 > gamma * delta_4`` it
    is cut to the first three.  Returns ``(reduced_basis, deltas)`` where
    ``deltas`` are the diagnostic Gram diagonal entries of the full input.

    Cached A/M-products riding on a TrialBasis are updated through the same
    elimination so no operator applications are needed when ``mv`` is present.
    """
    if isinstance(basis, TrialBasis):
        vectors = [np.array(v, copy=True) for v in basis.vectors]
        av = [np.array(v, copy=True) for v in basis.av] if basis.av is not None else None
        mv = [np.array(v, copy=True) for v in basis.mv] if basis.mv is not None else None
    else:
        vectors = [np.array(v, copy=True) for v in basis]
        av = mv = None
    if len(vectors) < 2:
        raise InvalidVector("need at least 2 vectors to orthogonalize")
    if gamma <= 1.0:
        raise ValueError("reduction threshold gamma must exceed 1")

    m_op = None if m is None else as_operator(m)
    if mv is None:
        if m_op is None:
            mv = [v.copy() for v in vectors]
        else:
            mv = [m_op.apply(v) for v in vectors]

    k = len(vectors)
    deltas = []
    for j in range(k):
        for i in range(j):
            if deltas[i] <= 0.0:
                continue
            c = np.vdot(vectors[i], mv[j]) / deltas[i]
            vectors[j] = vectors[j] - c * vectors[i]
            mv[j] = mv[j] - c * mv[i]
            if av is not None:
                av[j] = av[j] - c * av[i]
        deltas.append(float(np.vdot(vectors[j], mv[j]).real))

    if deltas[0] <= 0.0 or not np.isfinite(deltas[0]):
        raise NumericalBreakdown("leading basis vector has non-positive M-norm")

    keep = k
    if k >= 3 and deltas[0] > gamma * max(deltas[2], 0.0):
        keep = 2
    elif k == 4 and deltas[0] > gamma * max(deltas[3], 0.0):
        keep = 3

    out_vectors = vectors[:keep]
    out_av = av[:keep] if av is not None else None
    out_mv = mv[:keep]
    if 2 <= keep <= 5:
        out = TrialBasis(vectors=out_vectors, av=out_av, mv=out_mv)
    else:  # pragma: no cover - keep is always >= 2 here
        out = out_vectors
    return out, tuple(deltas)
