import numpy as np
import pytest
import scipy.linalg as sla

from pcgeig.linops import DenseHermitianOperator, HermitianPencil


def random_spd(rng, n, cond=None):
    """Random SPD matrix; if ``cond`` is given the spectrum is log-spaced."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    if cond is None:
        vals = rng.uniform(0.5, 2.0, size=n)
    else:
        vals = np.logspace(0.0, np.log10(cond), n)
    return (q * vals) @ q.T


def random_pencil(rng, n, m_cond=None, a_cond=None, complex_=False):
    """Random Hermitian definite pencil of size n, plus its dense matrices."""
    if complex_:
        b = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        a = b + b.conj().T
        c = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        m = c @ c.conj().T + n * np.eye(n)
    else:
        a = random_spd(rng, n, cond=a_cond)
        a = a - 0.5 * np.trace(a) / n * np.eye(n)  # make it indefinite-ish
        m = random_spd(rng, n, cond=m_cond)
    a = 0.5 * (a + a.conj().T)
    m = 0.5 * (m + m.conj().T)
    pencil = HermitianPencil(DenseHermitianOperator(a),
                             DenseHermitianOperator(m))
    return pencil, a, m


def dense_eigs(a, m=None):
    return sla.eigh(a, m, eigvals_only=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
