"""A-priori convergence estimates and a-posteriori asymptotic diagnostics.

The central quantity is

    eta = kappa * (lambda_n - lambda_1)(lambda_2 - sigma)
              / ((lambda_2 - lambda_1)(lambda_n - sigma))

with ``kappa`` the spectral condition number of the preconditioned shifted
operator.  The heuristic-CG eigenvalue error after i steps is bounded by a
Chebyshev polynomial of degree i evaluated at ``phi = (eta + 1)/(eta - 1)``,
scaled by the squared growth of the iterate M-norm; the steepest-descent
step factor is ``xi = ((eta - 1)/(eta + 1))^2`` with the same eta built from
the local eigenvalue pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rayleigh_ritz import rrw

__all__ = [
    "chebyshev",
    "BoundInputs",
    "eta_parameter",
    "pcg_bound",
    "psd_factor",
    "average_factor_psi2",
    "AsymptoticRow",
    "asymptotic_terms",
]


def chebyshev(i, phi):
    """Chebyshev polynomial of the first kind ``C_i(phi)`` via the three-term
    recurrence; for ``phi >= 1`` this equals ``cosh(i * arccosh(phi))``."""
    i = int(i)
    if i < 0:
        raise ValueError("degree must be nonnegative")
    phi = float(phi)
    if i == 0:
        return 1.0
    c_prev, c_cur = 1.0, phi
    for _ in range(i - 1):
        c_prev, c_cur = c_cur, 2.0 * phi * c_cur - c_prev
    return c_cur


@dataclass(frozen=True)
class BoundInputs:
    """Spectral data feeding the bounds.

    For the global bound, ``lambda1``/``lambda2`` are the two smallest pencil
    eigenvalues.  The steepest-descent step factor for an iterate between
    eigenvalues j and j+1 uses the same structure with the local pair in
    those slots; the constructor only insists on the orderings the formulas
    require.
    """

    lambda1: float
    lambda2: float
    lambda_n: float
    sigma: float
    kappa: float

    def __post_init__(self):
        if not self.lambda1 < self.lambda2:
            raise ValueError(
                "degenerate cluster: lambda2=%.17g must exceed lambda1=%.17g "
                "for the separation factors to exist" % (self.lambda2,
                                                         self.lambda1))
        if self.lambda2 > self.lambda_n:
            raise ValueError("lambda_n must be the largest eigenvalue")
        if not self.sigma < self.lambda1:
            raise ValueError("shift sigma=%.6g must lie below lambda1=%.6g"
                             % (self.sigma, self.lambda1))
        if not self.kappa >= 1.0:
            raise ValueError("condition number kappa must be >= 1")


def eta_parameter(inputs):
    """eta = kappa (lambda_n - lambda1)(lambda2 - sigma) /
    ((lambda2 - lambda1)(lambda_n - sigma))."""
    num = inputs.kappa * (inputs.lambda_n - inputs.lambda1) \
        * (inputs.lambda2 - inputs.sigma)
    den = (inputs.lambda2 - inputs.lambda1) * (inputs.lambda_n - inputs.sigma)
    return num / den


def pcg_bound(inputs, i, lam0_err, norm_ratio_sq):
    """Upper bound for ``theta_i - lambda1`` of the heuristic CG scheme.

    ``lam0_err`` is the initial eigenvalue error and ``norm_ratio_sq`` the
    factor ``||x0||_M^2 / ||x_i||_M^2``.  The bound divides the scaled
    initial error by ``C_i(phi)^2`` with ``phi = (eta + 1)/(eta - 1)``.

    When the problem is two-dimensional (or the preconditioner makes
    ``eta = 1``) the Krylov space contains the eigenvector after one step
    and the bound collapses to zero for ``i >= 1``.
    """
    if i < 0:
        raise ValueError("iteration index must be nonnegative")
    if lam0_err < 0.0 or norm_ratio_sq < 0.0:
        raise ValueError("error and norm ratio must be nonnegative")
    eta = eta_parameter(inputs)
    if eta < 1.0 - 1e-12:
        raise ValueError("eta=%.6g < 1 is outside the admissible range" % eta)
    if eta <= 1.0:
        return lam0_err * norm_ratio_sq if i == 0 else 0.0
    phi = (eta + 1.0) / (eta - 1.0)
    c = chebyshev(i, phi)
    return norm_ratio_sq * lam0_err / (c * c)


def psd_factor(inputs):
    """One-step error reduction factor ``xi = ((eta - 1)/(eta + 1))^2`` of
    preconditioned steepest descent, for the eta built from ``inputs``
    (global pair or the local pair bracketing the current Ritz value)."""
    eta = eta_parameter(inputs)
    if eta < 1.0 - 1e-12:
        raise ValueError("eta=%.6g < 1 is outside the admissible range" % eta)
    return ((eta - 1.0) / (eta + 1.0)) ** 2


def average_factor_psi2(eta):
    """Squared asymptotic-average factor ``psi^2``, ``psi = (sqrt(eta) - 1) /
    (sqrt(eta) + 1)``; satisfies ``C_m(phi)^{-2} = (2 psi^m/(1+psi^{2m}))^2``.
    """
    eta = float(eta)
    if eta < 1.0:
        raise ValueError("eta must be >= 1")
    root = np.sqrt(eta)
    psi = (root - 1.0) / (root + 1.0)
    return psi * psi


@dataclass(frozen=True)
class AsymptoticRow:
    """Deviation terms of the local three-step eigenvalue identities."""

    iteration: int
    delta1: float       # relative defect of the inverse-gap identity
    delta2: float       # additive defect of the error-ratio identity
    delta3: float       # inverse of the combined square-root expression
    sqrt_err: float     # sqrt(theta_i - lambda1), the predicted size scale


def asymptotic_terms(result, pencil, t, lambda1):
    """Evaluate the three-step asymptotic identities along a solver run.

    Needs a result produced with ``keep_iterates=True``.  For each window
    (i, i+1, i+2) the auxiliary value ``theta_tilde`` is the outcome of a
    single steepest-descent step applied to the stored iterate ``x_{i+1}``,
    and the three deviation terms are

    * delta1:  (g1 + g2) * (theta_{i+1} - theta_tilde) - 1, where
               g1 = 1/(theta_i - theta_{i+1}), g2 = 1/(theta_{i+1} - theta_{i+2})
    * delta2:  e1/(theta_i - theta_{i+1}) + e2/(theta_{i+1} - theta_{i+2})
               - et/(theta_{i+1} - theta_tilde), with e* the eigenvalue errors
    * delta3:  1 / (e0^{-1/2} + e2^{-1/2} - 2 et^{-1/2})

    Windows with a vanishing eigenvalue gap or a nonpositive error are
    skipped.  Each term is expected to be O(sqrt(theta_i - lambda1)) once the
    iteration is in its asymptotic regime.
    """
    if result.iterates is None:
        raise ValueError("asymptotic_terms needs a run with keep_iterates=True")
    thetas = [rec.theta for rec in result.history]
    iterates = result.iterates
    if len(iterates) != len(thetas):
        raise ValueError("iterate/history length mismatch")
    rows = []
    for i in range(len(thetas) - 2):
        th0, th1, th2 = thetas[i], thetas[i + 1], thetas[i + 2]
        gap01 = th0 - th1
        gap12 = th1 - th2
        e0 = th0 - lambda1
        e1 = th1 - lambda1
        e2 = th2 - lambda1
        if gap01 <= 0.0 or gap12 <= 0.0 or min(e0, e1, e2) <= 0.0:
            continue
        x1 = iterates[i + 1]
        r1 = pencil.a.apply(x1) - th1 * pencil.m.apply(x1)
        w1 = t.apply(r1) if t is not None else r1.copy()
        if not np.any(w1):
            continue
        try:
            out = rrw(pencil, [x1, w1])
        except Exception:
            continue
        th_tilde = out.theta_next
        et = th_tilde - lambda1
        gap1t = th1 - th_tilde
        if gap1t <= 0.0 or et <= 0.0:
            continue
        delta1 = (1.0 / gap01 + 1.0 / gap12) * gap1t - 1.0
        delta2 = e1 / gap01 + e2 / gap12 - et / gap1t
        denom3 = e0 ** -0.5 + e2 ** -0.5 - 2.0 * et ** -0.5
        if denom3 == 0.0:
            continue
        delta3 = 1.0 / denom3
        rows.append(AsymptoticRow(iteration=i, delta1=float(delta1),
                                  delta2=float(delta2), delta3=float(delta3),
                                  sqrt_err=float(np.sqrt(e0))))
    return rows
