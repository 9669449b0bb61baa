import numpy as np
import pytest
import scipy.linalg as sla

from pcgeig.linops import HermitianPencil, InvalidVector, rayleigh_quotient
from pcgeig.rayleigh_ritz import (
    DegenerateSubspace,
    GramConditioningError,
    TrialBasis,
    m_orthogonalize_with_reduction,
    rrw,
    small_dense_eigensolve,
)

from conftest import random_pencil


class TestSmallDenseEigensolve:
    @pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
    def test_matches_scipy(self, rng, n):
        for _ in range(20):
            a = rng.standard_normal((n, n))
            ga = a + a.T
            b = rng.standard_normal((n, n))
            gm = b @ b.T + n * np.eye(n)
            vals, vecs = small_dense_eigensolve(ga, gm)
            ref = sla.eigh(ga, gm, eigvals_only=True)
            np.testing.assert_allclose(vals, ref, rtol=1e-11, atol=1e-11)

    def test_complex_pair(self, rng):
        n = 4
        c = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        ga = c + c.conj().T
        d = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        gm = d @ d.conj().T + n * np.eye(n)
        vals, vecs = small_dense_eigensolve(ga, gm)
        ref = sla.eigh(ga, gm, eigvals_only=True)
        np.testing.assert_allclose(vals, ref, rtol=1e-10, atol=1e-10)

    def test_eigenvectors_m_orthonormal(self, rng):
        a = rng.standard_normal((4, 4))
        ga = a + a.T
        b = rng.standard_normal((4, 4))
        gm = b @ b.T + 4 * np.eye(4)
        vals, vecs = small_dense_eigensolve(ga, gm)
        np.testing.assert_allclose(vecs.conj().T @ gm @ vecs, np.eye(4),
                                   atol=1e-10)
        np.testing.assert_allclose(vecs.conj().T @ ga @ vecs, np.diag(vals),
                                   atol=1e-9)

    def test_ascending_order(self, rng):
        a = rng.standard_normal((6, 6))
        ga = a + a.T
        vals, _ = small_dense_eigensolve(ga, np.eye(6))
        assert np.all(np.diff(vals) >= 0)

    def test_graded_spectrum(self):
        ga = np.diag([1e-8, 1.0, 1e8])
        vals, _ = small_dense_eigensolve(ga, np.eye(3))
        np.testing.assert_allclose(vals, [1e-8, 1.0, 1e8], rtol=1e-12)

    def test_singular_mass_raises(self):
        gm = np.diag([1.0, 0.0])
        with pytest.raises(GramConditioningError):
            small_dense_eigensolve(np.eye(2), gm)


class TestRrwHandExamples:
    def test_two_dim_exact(self):
        """diag(1,2) with x=(1,1): the anchored step lands exactly on (2,0)."""
        pencil = HermitianPencil(np.diag([1.0, 2.0]))
        x = np.array([1.0, 1.0])
        r = np.array([-0.5, 0.5])        # (A - 1.5 I) x
        out = rrw(pencil, [x, r])
        assert out.theta_next == pytest.approx(1.0, abs=1e-14)
        np.testing.assert_allclose(out.x_next, [2.0, 0.0], atol=1e-13)
        assert out.coefficients[0] == 1.0
        assert out.coefficients[1] == pytest.approx(-2.0, rel=1e-13)
        assert out.events == ()

    def test_anchor_coefficient_exactly_one(self, rng):
        pencil, _, _ = random_pencil(rng, 8)
        x = rng.standard_normal(8)
        w = rng.standard_normal(8)
        out = rrw(pencil, [x, w])
        assert out.coefficients[0] == 1.0

    def test_zero_anchor_falls_back_to_plain_ritz(self):
        """Anchor = eigenvector, search direction = better eigenvector."""
        pencil = HermitianPencil(np.diag([1.0, 10.0]))
        x = np.array([0.0, 1.0])
        w = np.array([1.0, 0.0])
        out = rrw(pencil, [x, w])
        assert "unweighted-ritz" in out.events
        assert out.theta_next == pytest.approx(1.0, abs=1e-14)
        # returned vector has unit M-norm
        assert np.linalg.norm(out.x_next) == pytest.approx(1.0, rel=1e-13)

    def test_tie_break_prefers_anchor(self):
        pencil = HermitianPencil(2.0 * np.eye(2))
        x = np.array([1.0, 0.0])
        w = np.array([0.0, 1.0])
        out = rrw(pencil, [x, w])
        assert out.theta_next == pytest.approx(2.0)
        # both Ritz values tie at 2; the anchored tie-break keeps x itself
        np.testing.assert_allclose(out.x_next, x, atol=1e-14)

    def test_exactly_dependent_pair_raises(self):
        pencil = HermitianPencil(np.diag([1.0, 2.0]))
        x = np.array([1.0, 1.0])
        with pytest.raises(DegenerateSubspace):
            rrw(pencil, [x, 2.0 * x])

    def test_reduction_ladder(self, rng):
        """A duplicated third vector forces the {x, w} retry."""
        pencil, _, _ = random_pencil(rng, 6)
        x = rng.standard_normal(6)
        w = rng.standard_normal(6)
        out = rrw(pencil, [x, w, w.copy()])
        assert "reduce-to-xw" in out.events
        assert out.used == (0, 1)
        two = rrw(pencil, [x, w])
        assert out.theta_next == pytest.approx(two.theta_next, rel=1e-12)


class TestRrwOracle:
    def test_theta_is_projected_minimum(self, rng):
        """rrw's Ritz value equals the smallest eigenvalue of (V*AV, V*MV)."""
        for _ in range(40):
            n = int(rng.integers(3, 20))
            k = int(rng.integers(2, min(n, 5) + 1))
            pencil, a, m = random_pencil(rng, n)
            v = rng.standard_normal((n, k))
            out = rrw(pencil, list(v.T))
            ref = sla.eigh(v.T @ a @ v, v.T @ m @ v, eigvals_only=True)[0]
            assert out.theta_next == pytest.approx(ref, rel=1e-11, abs=1e-11)
            # the returned iterate actually attains the Ritz value
            assert rayleigh_quotient(pencil, out.x_next) == pytest.approx(
                out.theta_next, rel=1e-9, abs=1e-9)

    def test_update_lies_in_search_span(self, rng):
        pencil, _, _ = random_pencil(rng, 10)
        x = rng.standard_normal(10)
        dirs = rng.standard_normal((10, 3))
        out = rrw(pencil, [x] + list(dirs.T))
        step = out.x_next - x
        # the non-anchor part of the combination lives in span(dirs)
        resid = step - dirs @ np.linalg.lstsq(dirs, step, rcond=None)[0]
        assert np.linalg.norm(resid) <= 1e-10 * max(np.linalg.norm(step), 1.0)

    def test_one_dim_line_search_oracle(self, rng):
        """For a 2-vector basis, rrw beats a dense scan of x + t w."""
        for _ in range(10):
            pencil, a, m = random_pencil(rng, 8)
            x = rng.standard_normal(8)
            w = rng.standard_normal(8)
            out = rrw(pencil, [x, w])
            ts = np.linspace(-50.0, 50.0, 20001)
            cand = x[:, None] + ts[None, :] * w[:, None]
            num = np.einsum("ij,ij->j", cand, a @ cand)
            den = np.einsum("ij,ij->j", cand, m @ cand)
            grid_min = (num / den).min()
            assert out.theta_next <= grid_min + 1e-9

    def test_cached_products_are_honored(self, rng):
        """Passing a TrialBasis with precomputed products gives the same step."""
        pencil, a, m = random_pencil(rng, 7)
        x = rng.standard_normal(7)
        w = rng.standard_normal(7)
        bare = rrw(pencil, [x, w])
        basis = TrialBasis(vectors=[x, w], av=[a @ x, a @ w], mv=[m @ x, m @ w])
        cached = rrw(pencil, basis)
        assert cached.theta_next == pytest.approx(bare.theta_next, rel=1e-13)
        np.testing.assert_allclose(cached.x_next, bare.x_next, rtol=1e-10)
        np.testing.assert_allclose(cached.ax_next, a @ cached.x_next,
                                   rtol=1e-9, atol=1e-12)


class TestTrialBasisValidation:
    def test_too_few_vectors(self):
        with pytest.raises(InvalidVector):
            TrialBasis(vectors=[np.ones(3)])

    def test_too_many_vectors(self):
        with pytest.raises(InvalidVector):
            TrialBasis(vectors=[np.ones(3)] * 6)

    def test_nonfinite_vector(self):
        v = np.ones(3)
        bad = np.array([1.0, np.inf, 0.0])
        with pytest.raises(InvalidVector):
            TrialBasis(vectors=[v, bad])

    def test_zero_vector(self):
        with pytest.raises(InvalidVector):
            TrialBasis(vectors=[np.ones(3), np.zeros(3)])


class TestMOrthogonalize:
    def test_orthogonalizes_in_m_inner_product(self, rng):
        pencil, _, m = random_pencil(rng, 9)
        vs = [rng.standard_normal(9) for _ in range(4)]
        basis = TrialBasis(vectors=vs)
        reduced, deltas = m_orthogonalize_with_reduction(pencil.m, basis)
        q = np.array(reduced.vectors)
        gram = q @ m @ q.T
        off = gram - np.diag(np.diag(gram))
        assert np.abs(off).max() <= 1e-8 * np.abs(gram).max()
        assert len(deltas) == 4
        assert deltas[0] > 0

    def test_no_normalization(self, rng):
        """First vector passes through untouched (unnormalized MGS)."""
        pencil, _, _ = random_pencil(rng, 6)
        vs = [rng.standard_normal(6) for _ in range(3)]
        reduced, _ = m_orthogonalize_with_reduction(pencil.m, TrialBasis(vectors=vs))
        np.testing.assert_array_equal(reduced.vectors[0], vs[0])

    def test_reduction_to_two(self, rng):
        """delta_1 > gamma delta_3 cuts the basis to {x, w}."""
        pencil, _, _ = random_pencil(rng, 8)
        x = rng.standard_normal(8)
        w = rng.standard_normal(8)
        p = w + 1e-15 * rng.standard_normal(8)   # numerically dependent
        reduced, deltas = m_orthogonalize_with_reduction(
            pencil.m, TrialBasis(vectors=[x, w, p]), gamma=1e6)
        assert len(reduced.vectors) == 2

    def test_reduction_to_three_with_four_vectors(self, rng):
        pencil, _, _ = random_pencil(rng, 8)
        x = rng.standard_normal(8)
        w = rng.standard_normal(8)
        p = rng.standard_normal(8)
        a = p + 1e-15 * rng.standard_normal(8)
        reduced, deltas = m_orthogonalize_with_reduction(
            pencil.m, TrialBasis(vectors=[x, w, p, a]), gamma=1e6)
        assert len(reduced.vectors) == 3

    def test_healthy_basis_not_reduced(self, rng):
        pencil, _, _ = random_pencil(rng, 12)
        vs = [rng.standard_normal(12) for _ in range(4)]
        reduced, _ = m_orthogonalize_with_reduction(pencil.m, TrialBasis(vectors=vs))
        assert len(reduced.vectors) == 4
