"""Closed-form convergence bounds and the asymptotic diagnostics."""

import numpy as np
import pytest

from pcgeig.estimates import (
    BoundInputs,
    asymptotic_terms,
    average_factor_psi2,
    chebyshev,
    eta_parameter,
    pcg_bound,
    psd_factor,
)
from pcgeig.harness import initial_guess
from pcgeig.linops import HermitianPencil
from pcgeig.precond import jacobi_preconditioner
from pcgeig.problems import gen_diag
from pcgeig.solvers import SolverConfig, solve


class TestChebyshev:
    def test_base_cases(self):
        for phi in (1.0, 1.7, 5.0):
            assert chebyshev(0, phi) == 1.0
            assert chebyshev(1, phi) == phi

    def test_hand_value(self):
        # 1, 2, 7, 26 by the three-term recurrence
        assert chebyshev(2, 2.0) == pytest.approx(7.0)
        assert chebyshev(3, 2.0) == pytest.approx(26.0)

    def test_matches_hyperbolic_form(self):
        for phi in np.linspace(1.0, 10.0, 19):
            for i in (1, 2, 5, 10, 25, 50):
                ref = np.cosh(i * np.arccosh(phi))
                assert chebyshev(i, phi) == pytest.approx(ref, rel=1e-10)

    def test_growth_is_monotone_in_degree(self):
        vals = [chebyshev(i, 1.3) for i in range(20)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


def hand_inputs():
    # diag(1,2,4) with T = M = I and sigma = 0: kappa = 4, eta = 6
    return BoundInputs(lambda1=1.0, lambda2=2.0, lambda_n=4.0, sigma=0.0,
                       kappa=4.0)


class TestEta:
    def test_hand_value(self):
        assert eta_parameter(hand_inputs()) == pytest.approx(6.0)

    def test_exact_preconditioner_hand_value(self):
        inp = BoundInputs(lambda1=1.0, lambda2=2.0, lambda_n=4.0, sigma=0.0,
                          kappa=1.0)
        assert eta_parameter(inp) == pytest.approx(1.5)

    def test_eta_never_below_kappa(self, rng):
        for _ in range(200):
            lam = np.sort(rng.uniform(0.5, 50.0, size=3))
            if lam[1] - lam[0] < 1e-6 or lam[2] - lam[1] < 1e-9:
                continue
            sigma = lam[0] - rng.uniform(0.1, 5.0)
            kappa = rng.uniform(1.0, 100.0)
            inp = BoundInputs(lambda1=lam[0], lambda2=lam[1], lambda_n=lam[2],
                              sigma=sigma, kappa=kappa)
            assert eta_parameter(inp) >= kappa - 1e-12


class TestValidation:
    def test_ordering_enforced(self):
        with pytest.raises(ValueError, match="lambda2"):
            BoundInputs(lambda1=2.0, lambda2=1.0, lambda_n=3.0, sigma=0.0,
                        kappa=1.0)

    def test_shift_below_lambda1(self):
        with pytest.raises(ValueError, match="sigma"):
            BoundInputs(lambda1=1.0, lambda2=2.0, lambda_n=3.0, sigma=1.5,
                        kappa=1.0)

    def test_kappa_at_least_one(self):
        with pytest.raises(ValueError, match="kappa"):
            BoundInputs(lambda1=1.0, lambda2=2.0, lambda_n=3.0, sigma=0.0,
                        kappa=0.5)

    def test_degenerate_cluster_rejected(self):
        with pytest.raises(ValueError, match="cluster"):
            BoundInputs(lambda1=1.0, lambda2=1.0, lambda_n=3.0, sigma=0.0,
                        kappa=1.0)


class TestPsdFactor:
    def test_hand_value(self):
        # lambda=(1,2,4), sigma=0, kappa=1: eta=1.5, xi=(0.5/2.5)^2
        inp = BoundInputs(lambda1=1.0, lambda2=2.0, lambda_n=4.0, sigma=0.0,
                          kappa=1.0)
        assert psd_factor(inp) == pytest.approx(0.04)

    def test_eta_one_gives_zero(self):
        # lambda2 == lambda_n with kappa 1 collapses eta to 1
        inp = BoundInputs(lambda1=1.0, lambda2=3.0, lambda_n=3.0, sigma=0.0,
                          kappa=1.0)
        assert eta_parameter(inp) == pytest.approx(1.0)
        assert psd_factor(inp) == pytest.approx(0.0)

    def test_large_eta_tends_to_one(self):
        inp = BoundInputs(lambda1=1.0, lambda2=2.0, lambda_n=4.0, sigma=0.0,
                          kappa=1e12)
        assert 0.999 < psd_factor(inp) < 1.0

    def test_always_in_unit_interval(self, rng):
        for _ in range(100):
            lam = np.sort(rng.uniform(0.5, 20.0, size=3))
            if lam[1] - lam[0] < 1e-6:
                continue
            inp = BoundInputs(lambda1=lam[0], lambda2=lam[1], lambda_n=lam[2],
                              sigma=lam[0] - 1.0, kappa=rng.uniform(1.0, 50.0))
            assert 0.0 <= psd_factor(inp) < 1.0


class TestAverageFactor:
    def test_hand_values(self):
        assert average_factor_psi2(1.0) == pytest.approx(0.0)
        assert average_factor_psi2(9.0) == pytest.approx(0.25)

    @pytest.mark.parametrize("eta", [2.5, 4.0, 9.0, 33.0])
    def test_multi_step_identity(self, eta):
        """(C_m(phi))^-2 == (2 psi^m / (1 + psi^{2m}))^2 with
        phi = (eta+1)/(eta-1) and psi = (sqrt(eta)-1)/(sqrt(eta)+1)."""
        phi = (eta + 1.0) / (eta - 1.0)
        psi = np.sqrt(average_factor_psi2(eta))
        for m in range(1, 31):
            lhs = chebyshev(m, phi) ** -2
            rhs = (2.0 * psi ** m / (1.0 + psi ** (2 * m))) ** 2
            assert lhs == pytest.approx(rhs, rel=1e-10)


class TestPcgBound:
    def test_degree_zero_is_the_input_error(self):
        inp = hand_inputs()
        assert pcg_bound(inp, 0, 0.7, 2.0) == pytest.approx(1.4)

    def test_perfect_preconditioner_collapses_in_one_step(self):
        inp = BoundInputs(lambda1=1.0, lambda2=3.0, lambda_n=3.0, sigma=0.0,
                          kappa=1.0)   # eta == 1
        assert pcg_bound(inp, 0, 0.7, 1.0) == pytest.approx(0.7)
        assert pcg_bound(inp, 1, 0.7, 1.0) == 0.0
        assert pcg_bound(inp, 7, 0.7, 1.0) == 0.0

    def test_decreasing_in_the_degree(self):
        inp = hand_inputs()
        vals = [pcg_bound(inp, i, 1.0, 1.0) for i in range(25)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-8

    def test_identity_operators_specialization(self):
        """For T = M = I the effective eta is (ln-l1)/(l2-l1) and the
        Chebyshev argument reduces to 1 + 2 (l2-l1)/(ln-l2)."""
        l1, l2, ln = 1.0, 2.5, 9.0
        eta = (ln - l1) / (l2 - l1)
        phi = (eta + 1.0) / (eta - 1.0)
        assert phi == pytest.approx(1.0 + 2.0 * (l2 - l1) / (ln - l2),
                                    rel=1e-12)
        # the operator-level realization: T = I with the shift pushed far
        # below the spectrum, where kappa = (ln-sigma)/(l1-sigma) -> 1
        sigma = -1e9
        inp = BoundInputs(lambda1=l1, lambda2=l2, lambda_n=ln, sigma=sigma,
                          kappa=(ln - sigma) / (l1 - sigma))
        assert eta_parameter(inp) == pytest.approx(eta, rel=1e-7)


def lopcg_run(pencil, t, x0, lam1, tol=1e-11, max_iters=3000):
    cfg = SolverConfig(method="lopcg", tol_residual=tol, max_iters=max_iters,
                       keep_iterates=True)
    return solve(pencil, t, x0, cfg, lambda1_ref=lam1)


class TestAsymptoticTerms:
    def test_requires_kept_iterates(self):
        pencil = gen_diag(np.linspace(1.0, 30.0, 20))
        cfg = SolverConfig(method="lopcg", tol_residual=1e-9)
        res = solve(pencil, None, np.ones(20), cfg)
        with pytest.raises(ValueError, match="keep_iterates"):
            asymptotic_terms(res, pencil, None, 1.0)

    def test_defect_is_small_in_the_asymptotic_window(self):
        rng = np.random.default_rng(7)
        q, _ = np.linalg.qr(rng.standard_normal((40, 40)))
        a = (q * np.linspace(2.0, 60.0, 40)) @ q.T
        pencil = HermitianPencil(0.5 * (a + a.T))
        t = jacobi_preconditioner(pencil, 0.0)
        res = lopcg_run(pencil, t, np.ones(40), 2.0, max_iters=300)
        rows = asymptotic_terms(res, pencil, t, 2.0)
        window = [r for r in rows if 1e-4 <= r.sqrt_err <= 1e-1]
        assert len(window) >= 5
        for row in window:
            assert abs(row.delta1) <= 10.0 * row.sqrt_err

    def test_cluster_breaks_the_sqrt_scaling(self):
        """On a clustered spectrum the second identity's deviation visibly
        exceeds sqrt(theta - lambda1) for at least one window."""
        vals = np.concatenate([[1.0, 1.0 + 1e-6], np.arange(2.0, 500.0)])
        pencil = gen_diag(vals)
        t = jacobi_preconditioner(pencil, 0.0)
        x0 = initial_guess(vals.size, seed=1, style="random-normal")
        res = lopcg_run(pencil, t, x0, 1.0, tol=1e-10)
        rows = asymptotic_terms(res, pencil, t, 1.0)
        assert any(abs(r.delta2) > r.sqrt_err for r in rows)

    def test_rows_skip_stalled_windows(self):
        pencil = gen_diag(np.array([1.0, 2.0, 3.0]))
        cfg = SolverConfig(method="lopcg", tol_residual=1e-12, max_iters=50,
                           keep_iterates=True)
        # eigenvector start: zero progress, every window must be skipped
        res = solve(pencil, None, np.array([1.0, 0.0, 0.0]), cfg)
        assert asymptotic_terms(res, pencil, None, 1.0) == []
