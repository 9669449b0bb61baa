import numpy as np
import pytest
import scipy.sparse as sp

from pcgeig.linops import (
    CountingOperator,
    DenseHermitianOperator,
    DiagonalOperator,
    DimensionMismatch,
    HermitianPencil,
    IdentityOperator,
    InvalidVector,
    NotHermitian,
    NotPositiveDefinite,
    SparseHermitianOperator,
    as_operator,
    hermiticity_defect,
    m_inner,
    m_norm,
    rayleigh_quotient,
    residual,
    residual_norm,
)

from conftest import random_pencil


class TestDenseOperator:
    def test_apply_matches_matmul(self, rng):
        a = rng.standard_normal((7, 7))
        a = a + a.T
        op = DenseHermitianOperator(a)
        v = rng.standard_normal(7)
        np.testing.assert_allclose(op.apply(v), a @ v, rtol=1e-14)
        np.testing.assert_allclose(op @ v, a @ v, rtol=1e-14)

    def test_rejects_nonsymmetric(self, rng):
        a = rng.standard_normal((5, 5))
        with pytest.raises(NotHermitian):
            DenseHermitianOperator(a)

    def test_rejects_nonsquare(self):
        with pytest.raises(DimensionMismatch):
            DenseHermitianOperator(np.ones((3, 4)))

    def test_rejects_nan(self):
        a = np.eye(3)
        a[1, 1] = np.nan
        with pytest.raises(InvalidVector):
            DenseHermitianOperator(a)

    def test_complex_hermitian(self, rng):
        b = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
        h = b + b.conj().T
        op = DenseHermitianOperator(h)
        v = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        np.testing.assert_allclose(op.apply(v), h @ v, rtol=1e-13)
        # quadratic form is real after hermitization
        q = np.vdot(v, op.apply(v))
        assert abs(q.imag) < 1e-12 * abs(q.real)

    def test_hermitizes_storage(self):
        # asymmetry below tolerance is accepted and symmetrized away
        a = np.array([[2.0, 1.0], [1.0 + 1e-15, 3.0]])
        op = DenseHermitianOperator(a)
        d = op.to_dense()
        np.testing.assert_array_equal(d, d.T)

    def test_dimension_mismatch_on_apply(self):
        op = DenseHermitianOperator(np.eye(4))
        with pytest.raises(DimensionMismatch):
            op.apply(np.ones(5))


class TestSparseOperator:
    def test_apply(self, rng):
        d = rng.standard_normal((8, 8))
        d = d + d.T
        d[np.abs(d) < 0.8] = 0.0
        d = 0.5 * (d + d.T)
        op = SparseHermitianOperator(sp.csr_matrix(d))
        v = rng.standard_normal(8)
        np.testing.assert_allclose(op.apply(v), d @ v, rtol=1e-13, atol=1e-14)
        np.testing.assert_allclose(op.to_dense(), d, atol=1e-15)

    def test_rejects_nonsymmetric_sparse(self):
        m = sp.csr_matrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
        with pytest.raises(NotHermitian):
            SparseHermitianOperator(m)

    def test_rejects_dense_input(self):
        with pytest.raises(TypeError):
            SparseHermitianOperator(np.eye(3))


def test_diagonal_operator():
    op = DiagonalOperator([1.0, -2.0, 4.0])
    np.testing.assert_array_equal(op.apply(np.ones(3)), [1.0, -2.0, 4.0])
    np.testing.assert_array_equal(op.to_dense(), np.diag([1.0, -2.0, 4.0]))


def test_diagonal_operator_rejects_complex_diagonal():
    with pytest.raises(NotHermitian):
        DiagonalOperator(np.array([1.0, 1.0 + 1j]))


def test_identity_operator_returns_copy():
    op = IdentityOperator(3)
    v = np.ones(3)
    out = op.apply(v)
    out[0] = 7.0
    assert v[0] == 1.0


def test_counting_operator(rng):
    op = CountingOperator(IdentityOperator(4))
    v = rng.standard_normal(4)
    op.apply(v)
    op.apply(v)
    assert op.count == 2
    op.to_dense()
    assert op.count == 2  # dense extraction is not a matvec


def test_as_operator_dispatch(rng):
    a = np.eye(3)
    assert isinstance(as_operator(a), DenseHermitianOperator)
    assert isinstance(as_operator(sp.eye(3, format="csr")), SparseHermitianOperator)
    op = IdentityOperator(3)
    assert as_operator(op) is op
    with pytest.raises(TypeError):
        as_operator([1.0, 2.0])


class TestPencil:
    def test_default_mass_is_identity(self):
        p = HermitianPencil(np.eye(3) * 2.0)
        assert isinstance(p.m, IdentityOperator)
        assert p.n == 3

    def test_rejects_indefinite_mass(self):
        a = np.eye(4)
        m = np.diag([1.0, 1.0, -1.0, 1.0])
        with pytest.raises(NotPositiveDefinite):
            HermitianPencil(a, m)

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            HermitianPencil(np.eye(3), np.eye(4))


class TestQuotientAndResidual:
    def test_hand_values(self):
        p = HermitianPencil(np.diag([1.0, 2.0, 4.0]))
        x = np.array([1.0, 1.0, 0.0])
        assert rayleigh_quotient(p, x) == pytest.approx(1.5, rel=1e-15)
        r = residual(p, x)
        np.testing.assert_allclose(r, [-0.5, 0.5, 0.0], rtol=1e-15)
        # ||r|| / ||x||_M = (0.5 sqrt 2) / sqrt 2
        assert residual_norm(p, x) == pytest.approx(0.5, rel=1e-14)

    def test_eigenvector_has_zero_residual(self):
        p = HermitianPencil(np.diag([1.0, 2.0, 4.0]))
        e = np.array([0.0, 1.0, 0.0])
        assert residual_norm(p, e) < 1e-15
        assert rayleigh_quotient(p, e) == 2.0

    def test_quotient_bounds(self, rng):
        pencil, a, m = random_pencil(rng, 12)
        import scipy.linalg as sla
        lam = sla.eigh(a, m, eigvals_only=True)
        for _ in range(25):
            x = rng.standard_normal(12)
            q = rayleigh_quotient(pencil, x)
            assert lam[0] - 1e-10 <= q <= lam[-1] + 1e-10

    def test_generalized_residual_norm_uses_m_norm(self, rng):
        pencil, a, m = random_pencil(rng, 9)
        x = rng.standard_normal(9)
        theta = rayleigh_quotient(pencil, x)
        expect = np.linalg.norm(a @ x - theta * (m @ x)) / np.sqrt(x @ m @ x)
        assert residual_norm(pencil, x) == pytest.approx(expect, rel=1e-12)

    def test_zero_vector_rejected(self):
        p = HermitianPencil(np.eye(2))
        with pytest.raises(InvalidVector):
            rayleigh_quotient(p, np.zeros(2))


def test_m_inner_is_conjugate_linear_in_first_argument(rng):
    pencil, _, m = random_pencil(rng, 6, complex_=True)
    x = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    y = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    lhs = m_inner(pencil.m, 1j * x, y)
    rhs = -1j * m_inner(pencil.m, x, y)
    assert lhs == pytest.approx(rhs, rel=1e-12)
    direct = np.vdot(x, m @ y)
    assert m_inner(pencil.m, x, y) == pytest.approx(direct, rel=1e-12)


def test_m_norm_positive(rng):
    pencil, _, m = random_pencil(rng, 6)
    x = rng.standard_normal(6)
    assert m_norm(pencil.m, x) == pytest.approx(np.sqrt(x @ m @ x), rel=1e-12)


def test_hermiticity_defect_near_zero_for_hermitian(rng):
    pencil, _, _ = random_pencil(rng, 10)
    assert hermiticity_defect(pencil.a, probes=32) < 1e-12


def test_hermiticity_defect_detects_asymmetry():
    class Liar(DenseHermitianOperator):
        """Claims to be Hermitian but applies an asymmetric matrix."""

        def __init__(self):
            super().__init__(np.eye(5))
            self.bad = np.triu(np.ones((5, 5)))

        def apply(self, v):
            return self.bad @ np.asarray(v)

    assert hermiticity_defect(Liar(), probes=16) > 1e-2
