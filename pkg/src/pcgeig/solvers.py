"""Single-vector preconditioned eigensolvers for the smallest pencil eigenvalue.

Implemented schemes, all sharing one bookkeeping layer:

* ``pcg``     heuristic preconditioned CG on the singular system
              (A - lambda1 M) x = 0, requiring a lambda1 estimate
* ``psd``     preconditioned steepest descent: Ritz step over {x, T r}
* ``lopcg``   locally optimal PCG: Ritz step over {x, T r, p}
* ``lopcgx``  lopcg with the twice-previous iterate appended
* ``lopcga``  lopcg with an anchored previous iterate kept in the basis,
              refreshed when the iterate drifts away from it
* ``tpcg``    two-term recurrence PCG variants (Ritz step over {x, p})
* ``tpcga``   tpcg with residual-peak-triggered augmentation by the best
              iterate seen so far
* ``gd``      accumulating diagnostic scheme: Ritz step over all collected
              preconditioned residuals (small problems only)

Every solver maintains cached products (v, A v, M v) for each vector it
keeps, updating them through the same linear combinations as the vectors
themselves.  A regular iteration therefore costs one application of A, M
and T each; a periodic renormalization step refreshes the cache with one
extra A and M application.  The per-iteration application counts are
recorded so tests can audit the budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .history import ConvergenceHistory, IterationRecord
from .linops import (
    InvalidVector,
    NumericalBreakdown,
    _check_vector,
    CountingOperator,
)
from .precond import IdentityPreconditioner
from .rayleigh_ritz import (
    DegenerateSubspace,
    GramConditioningError,
    TrialBasis,
    _assemble_grams,
    _pick_smallest,
    m_orthogonalize_with_reduction,
    rrw,
    small_dense_eigensolve,
)

__all__ = [
    "SolverConfig",
    "SolveResult",
    "solve",
    "solve_pcg_heuristic",
    "solve_psd",
    "solve_lopcg",
    "solve_lopcgx",
    "solve_lopcga",
    "solve_tpcg",
    "solve_tpcga",
    "solve_gd",
    "PeakFlagTracker",
]

METHODS = ("pcg", "psd", "lopcg", "lopcgx", "lopcga", "tpcg", "tpcga", "gd")
TPCG_FAMILIES = ("bradbury-fletcher", "polak-ribiere", "jacobi-shift",
                 "perdon-gambolati", "daniel")
TPCG_VARIANTS = ("standard", "lagged-projector")


@dataclass
class SolverConfig:
    """Knobs shared by all schemes; method-specific fields are ignored elsewhere.

    The defaults reproduce the recommended settings: anchored-basis refresh
    at |cos| < 0.7, Gram reduction threshold 1e26, residual-peak detection at
    a factor 1.5 over the running minimum with a one-step decrease window,
    and augmentation armed only once the residual has dropped below one
    tenth of its initial value.
    """

    method: str = "lopcg"
    tol_residual: float = 1e-8
    max_iters: int = 200
    # accepted for config compatibility: the Ritz-step schemes renormalize the
    # iterate at every accepted step (the product refresh makes this free), so
    # the cadence no longer changes the trajectory
    normalize_every: int = 10
    # anchored basis (lopcga)
    tau_angle: float = 0.7
    gamma_gram: float = 1e26
    # two-term recurrence (tpcg / tpcga)
    tpcg_family: str = "jacobi-shift"
    tpcg_variant: str = "lagged-projector"
    jacobi_alpha: float = 1.0
    sigma_guess: float | None = None
    # residual-peak augmentation (tpcga)
    peak_factor: float = 1.5
    peak_decrease_window: int = 1
    activation: float = 0.1
    # heuristic pcg
    lambda1_input: float | None = None
    lambda1_update: bool = False
    lambda1_update_level: float = 1e-2
    # diagnostics
    keep_iterates: bool = False
    debug_checks: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError("unknown method %r (choose from %s)"
                             % (self.method, ", ".join(METHODS)))
        if self.tpcg_family not in TPCG_FAMILIES:
            raise ValueError("unknown tpcg family %r" % self.tpcg_family)
        if self.tpcg_variant not in TPCG_VARIANTS:
            raise ValueError("unknown tpcg variant %r" % self.tpcg_variant)
        if not self.tol_residual > 0.0:
            raise ValueError("tol_residual must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.normalize_every < 1:
            raise ValueError("normalize_every must be at least 1")
        if not 0.0 <= self.tau_angle:
            raise ValueError("tau_angle must be nonnegative")
        if self.gamma_gram <= 1.0:
            raise ValueError("gamma_gram must exceed 1")
        if self.peak_factor <= 1.0:
            raise ValueError("peak_factor must exceed 1")
        if self.peak_decrease_window < 1:
            raise ValueError("peak_decrease_window must be at least 1")
        if not 0.0 < self.activation <= 1.0:
            raise ValueError("activation must lie in (0, 1]")
        if not 0.0 < self.lambda1_update_level < 1.0:
            raise ValueError("lambda1_update_level must lie in (0, 1)")


@dataclass
class SolveResult:
    method: str
    theta_final: float
    x_final: np.ndarray
    iterations: int
    converged: bool
    history: ConvergenceHistory
    events: list
    matvecs: dict
    a_applies_per_iter: list
    nu_final: float
    info: dict = field(default_factory=dict)
    iterates: list | None = None


# ---------------------------------------------------------------------------
# cached (v, A v, M v) triples
# ---------------------------------------------------------------------------

class _Triple:
    __slots__ = ("v", "av", "mv")

    def __init__(self, v, av, mv):
        self.v = v
        self.av = av
        self.mv = mv

    def copy(self):
        return _Triple(self.v.copy(), self.av.copy(), self.mv.copy())

    def scaled(self, s):
        return _Triple(self.v * s, self.av * s, self.mv * s)

    def axpy(self, c, other):
        """self - c * other, as a new triple."""
        return _Triple(self.v - c * other.v, self.av - c * other.av,
                       self.mv - c * other.mv)

    def plus(self, c, other):
        return _Triple(self.v + c * other.v, self.av + c * other.av,
                       self.mv + c * other.mv)


class _Work:
    """Common solver state: counted operators, history, event log, metrics."""

    def __init__(self, pencil, t, x0, config, lambda1_ref):
        self.a = CountingOperator(pencil.a)
        self.m = CountingOperator(pencil.m)
        self.t = CountingOperator(t if t is not None
                                  else IdentityPreconditioner(pencil.n))
        if self.t.n != pencil.n:
            raise InvalidVector("preconditioner dimension %d does not match "
                                "pencil dimension %d" % (self.t.n, pencil.n))
        self.pencil = pencil
        self.config = config
        self.lambda1_ref = lambda1_ref
        self.history = ConvergenceHistory()
        self.events = []
        self.a_per_iter = []
        self._a_mark = 0
        self.iterates = [] if config.keep_iterates else None
        self.prev_theta = None
        self.prev_phi = None
        self.pending = []       # events to attach to the next record
        x0 = _check_vector(np.asarray(x0, dtype=float)
                           if not np.iscomplexobj(x0) else np.asarray(x0),
                           pencil.n, name="x0")
        if not np.any(x0):
            raise InvalidVector("initial guess must be nonzero")
        self.x = self.triple(x0.copy())

    def triple(self, v):
        return _Triple(v, self.a.apply(v), self.m.apply(v))

    def precondition(self, r):
        """w = T r together with its cached products (one A, M, T apply)."""
        w = self.t.apply(r)
        return self.triple(w)

    def refresh(self, trip):
        """Recompute the products with fresh applies, scaled to unit M-norm."""
        fresh = self.triple(trip.v)
        s = np.sqrt(np.vdot(fresh.v, fresh.mv).real)
        if not (np.isfinite(s) and s > 0.0):
            raise NumericalBreakdown("iterate has non-positive M-norm %.3e" % s)
        return fresh.scaled(1.0 / s)

    def normalize_x(self):
        s = np.sqrt(np.vdot(self.x.v, self.x.mv).real)
        if not (np.isfinite(s) and s > 0.0):
            raise NumericalBreakdown("cannot normalize: ||x||_M = %.3e" % s)
        self.x = self.x.scaled(1.0 / s)

    def theta_of(self, trip):
        num = np.vdot(trip.v, trip.av).real
        den = np.vdot(trip.v, trip.mv).real
        if den <= 0.0:
            raise NumericalBreakdown("iterate has non-positive M-norm squared "
                                     "%.3e" % den)
        return num / den

    def residual_of(self, trip, theta):
        return trip.av - theta * trip.mv

    def nu_of(self, trip, theta):
        r = self.residual_of(trip, theta)
        xm = np.vdot(trip.v, trip.mv).real
        return float(np.linalg.norm(r) / np.sqrt(xm))

    def cos_angle(self, ta, tb):
        """|cos| of the M-angle between two cached triples."""
        num = abs(np.vdot(ta.v, tb.mv))
        den = np.sqrt(np.vdot(ta.v, ta.mv).real * np.vdot(tb.v, tb.mv).real)
        if den <= 0.0:
            return 0.0
        return float(min(num / den, 1.0))

    def record(self, iteration, theta, nu, phi=None, extra_events=()):
        events = tuple(self.pending) + tuple(extra_events)
        self.pending = []
        d_lam = None
        if self.prev_theta is not None and self.prev_theta != 0.0:
            d_lam = float(np.sqrt(abs(theta / self.prev_theta - 1.0)))
        d_phi = None
        if phi is not None and self.prev_phi not in (None, 0.0):
            d_phi = float(abs(phi / self.prev_phi - 1.0))
        theta_err = None if self.lambda1_ref is None \
            else float(theta - self.lambda1_ref)
        self.history.append(IterationRecord(
            iteration=iteration, theta=float(theta), theta_err=theta_err,
            nu=float(nu), phi=phi, delta_lambda=d_lam, delta_phi=d_phi,
            events=events))
        for label in events:
            self.events.append((iteration, label))
        self.prev_theta = float(theta)
        if phi is not None:
            self.prev_phi = float(phi)
        if self.iterates is not None:
            self.iterates.append(self.x.v.copy())
        self.a_per_iter.append(self.a.count - self._a_mark)
        self._a_mark = self.a.count

    def note(self, label):
        self.pending.append(label)

    def result(self, theta, nu, converged, iterations, info=None):
        return SolveResult(
            method=self.config.method,
            theta_final=float(theta),
            x_final=self.x.v.copy(),
            iterations=iterations,
            converged=converged,
            history=self.history,
            events=self.events,
            matvecs={"A": self.a.count, "M": self.m.count, "T": self.t.count},
            a_applies_per_iter=self.a_per_iter,
            nu_final=float(nu),
            info=dict(info or {}),
            iterates=self.iterates,
        )


def _basis_from(triples):
    return TrialBasis(vectors=[t.v for t in triples],
                      av=[t.av for t in triples],
                      mv=[t.mv for t in triples])


def _adopt(out, triples):
    """Combine the surviving basis triples with the Ritz coefficients."""
    kept = [triples[i] for i in out.used]
    return _Triple(out.x_next, out.ax_next, out.mx_next), kept


def _implicit_direction(x_old, x_next, kept, out):
    """Momentum direction taken as the non-anchor part of the Ritz update.

    Forming ``x_next - x_old`` explicitly subtracts two near-equal unit
    vectors once the steps get small, so the cached operator products of the
    difference lose exactly the digits the next trial basis needs.  The
    combination ``sum_j c_j u_j`` over the non-anchor basis members is the
    same vector but built from step-sized summands, which keeps the products
    consistent to machine precision relative to their own scale.
    """
    if "unweighted-ritz" in out.events:
        return x_next.axpy(1.0, x_old)
    parts = list(zip(out.coefficients[1:], kept[1:]))
    if not parts:
        return None
    c0, t0 = parts[0]
    acc = t0.scaled(c0)
    for c, tr in parts[1:]:
        acc = acc.plus(c, tr)
    if not np.any(acc.v):
        return None
    return acc


# ---------------------------------------------------------------------------
# heuristic PCG on the shifted singular system
# ---------------------------------------------------------------------------

def solve_pcg_heuristic(pencil, t, lambda1, x0, config, lambda1_ref=None):
    """Plain preconditioned CG applied to ``(A - lambda1 M) x = 0``.

    ``lambda1`` must underestimate (ideally equal) the smallest eigenvalue;
    the shifted operator is then positive semidefinite on the relevant
    subspace and CG minimizes the energy functional, which drives the
    Rayleigh quotient of the unnormalized iterates toward the eigenvalue.
    The recurrence is left completely untouched -- no normalization, no
    restarts -- so the iterate growth ``||x^{(i)}||_M`` it produces is the
    one the convergence bound refers to.

    With ``config.lambda1_update`` the shift is re-seeded with the current
    Rayleigh quotient once the residual has shrunk by
    ``config.lambda1_update_level``, restarting the recurrence (useful when
    only a rough lower bound is known up front).
    """
    if lambda1 is None:
        raise ValueError("the heuristic CG scheme needs a lambda1 estimate")
    work = _Work(pencil, t, x0, config, lambda1_ref)
    shift = float(lambda1)

    x = work.x
    theta = work.theta_of(x)
    nu = work.nu_of(x, theta)
    nu0 = nu
    next_update = nu0 * config.lambda1_update_level
    work.record(0, theta, nu)

    # r = -(A - shift M) x, recurrence form
    r = -(x.av - shift * x.mv)
    w = work.t.apply(r)
    gamma = np.vdot(w, r).real
    p = w.copy()

    converged = nu <= config.tol_residual
    iterations = 0
    norm_x0_m = float(np.sqrt(np.vdot(x.v, x.mv).real))

    for i in range(config.max_iters):
        if converged:
            break
        if gamma <= 0.0:
            if gamma == 0.0:
                break  # residual exactly zero
            raise NumericalBreakdown(
                "preconditioned residual norm gamma=%.3e is negative; the "
                "preconditioner is not positive definite" % gamma)
        ap = work.a.apply(p)
        mp = work.m.apply(p)
        wdir = ap - shift * mp
        denom = np.vdot(wdir, p).real
        if denom <= 0.0:
            raise NumericalBreakdown(
                "p*(A - shift M)p = %.3e is not positive: shift %.6g "
                "overestimates the smallest eigenvalue" % (denom, shift))
        delta = gamma / denom
        work.x = x = _Triple(x.v + delta * p, x.av + delta * ap,
                             x.mv + delta * mp)
        r = r - delta * wdir
        w = work.t.apply(r)
        gamma_next = np.vdot(w, r).real
        p = w + (gamma_next / gamma) * p
        gamma = gamma_next

        theta = work.theta_of(x)
        nu = work.nu_of(x, theta)
        iterations = i + 1
        if config.lambda1_update and nu < next_update:
            shift = theta
            r = -(x.av - shift * x.mv)
            w = work.t.apply(r)
            gamma = np.vdot(w, r).real
            p = w.copy()
            next_update *= config.lambda1_update_level
            work.note("lambda1-update")
        work.record(iterations, theta, nu)
        if nu <= config.tol_residual:
            converged = True

    norm_x_m = float(np.sqrt(np.vdot(x.v, x.mv).real))
    return work.result(theta, nu, converged, iterations, info={
        "shift_final": shift,
        "norm_ratio_sq": (norm_x0_m / norm_x_m) ** 2,
    })


# ---------------------------------------------------------------------------
# Ritz-step schemes: psd / lopcg / lopcgx / lopcga / gd
# ---------------------------------------------------------------------------

def _reduction_events(n_before, n_after):
    if n_after >= n_before:
        return ()
    return ("reduce-to-xwp",) if n_after == 3 else ("reduce-to-xw",)


def _run_ritz_scheme(pencil, t, x0, config, lambda1_ref, build_basis,
                     after_step=None, phi_fn=None, info_fn=None):
    """Shared driver: convergence check, basis build, Ritz step, direction
    update, bookkeeping.

    After every Ritz step the new iterate's operator products are recomputed
    with fresh applies and the iterate is scaled to unit M-norm.  Assembling
    the products as linear combinations of the old cache instead lets
    rounding drift compound geometrically through the momentum direction
    (the recombination coefficients are O(1)), which in practice stalls the
    residual around 1e-7 on stiff problems while the recorded values keep
    shrinking.  The refresh pins the cache to the true products at a cost of
    one extra A-apply per step, keeping the total at two.
    """
    work = _Work(pencil, t, x0, config, lambda1_ref)
    work.normalize_x()
    x = work.x
    theta = work.theta_of(x)
    nu = work.nu_of(x, theta)
    phi = phi_fn(work, None) if phi_fn else None
    work.record(0, theta, nu, phi=phi)

    converged = nu <= config.tol_residual
    iterations = 0
    state = {}

    for i in range(config.max_iters):
        if converged:
            break
        x = work.x
        r = work.residual_of(x, theta)
        w = work.precondition(r)
        triples = build_basis(work, state, i, w)
        out = rrw(pencil, _basis_from(triples))
        for label in out.events:
            work.note(label)
        x_next, kept = _adopt(out, triples)
        x_next = work.refresh(x_next)
        if after_step:
            after_step(work, state, i, x_next, kept, out)
        work.x = x = x_next
        theta = work.theta_of(x)
        nu = work.nu_of(x, theta)
        iterations = i + 1
        phi = phi_fn(work, state) if phi_fn else None
        work.record(iterations, theta, nu, phi=phi)
        if nu <= config.tol_residual:
            converged = True

    info = info_fn(state) if info_fn else {}
    return work.result(theta, nu, converged, iterations, info=info)


def solve_psd(pencil, t, x0, config, lambda1_ref=None):
    """Preconditioned steepest descent: Ritz step over {x, T r} each iteration."""

    def build(work, state, i, w):
        return [work.x, w]

    return _run_ritz_scheme(pencil, t, x0, config, lambda1_ref, build)


def solve_lopcg(pencil, t, x0, config, lambda1_ref=None):
    """Locally optimal PCG: Ritz step over {x, T r, p}, p = x - x_previous.

    The first step (no direction yet) coincides with steepest descent.
    """

    def build(work, state, i, w):
        p = state.get("p")
        return [work.x, w] if p is None else [work.x, w, p]

    def after(work, state, i, x_next, kept, out):
        state["p"] = _implicit_direction(work.x, x_next, kept, out)

    return _run_ritz_scheme(pencil, t, x0, config, lambda1_ref, build,
                            after_step=after)


def solve_lopcgx(pencil, t, x0, config, lambda1_ref=None):
    """lopcg extended so the trial space also spans the twice-previous
    iterate.

    The extra member is represented by the previous momentum direction
    rather than the raw old iterate: together with x and p it spans exactly
    {x, x_prev, x_prev2}, but without putting two nearly parallel unit
    vectors into the Gram matrices.
    """

    def build(work, state, i, w):
        triples = [work.x, w]
        for key in ("p", "p_prev"):
            tr = state.get(key)
            if tr is not None:
                triples.append(tr)
        return triples

    def after(work, state, i, x_next, kept, out):
        state["p_prev"] = state.get("p")
        state["p"] = _implicit_direction(work.x, x_next, kept, out)

    return _run_ritz_scheme(pencil, t, x0, config, lambda1_ref, build,
                            after_step=after)


def solve_lopcga(pencil, t, x0, config, lambda1_ref=None):
    """Anchored lopcg: the basis keeps an aged copy ``a`` of an earlier iterate.

    While the current iterate stays M-collinear with the anchor
    (|cos| >= tau_angle) the trial basis is {x, T r, p, a}; once the iterate
    has turned away, the anchor is refreshed to the current x and the step
    falls back to the plain three-term basis.  Before the Ritz step the
    basis is M-orthogonalized without normalization; extreme decay of the
    Gram diagonal (ratio beyond gamma_gram) cuts the basis back, which
    protects the small eigensolve from the squared conditioning.
    """

    def build(work, state, i, w):
        if "anchor" not in state:
            state["anchor"] = work.x.copy()
        p = state.get("p")
        anchor = state["anchor"]
        if p is None:
            return [work.x, w]
        cos = work.cos_angle(anchor, work.x)
        if cos < work.config.tau_angle:
            state["anchor"] = work.x.copy()
            work.note("anchor-update")
            raw = [work.x, w, p]
        else:
            raw = [work.x, w, p, anchor]
        basis = TrialBasis(vectors=[tr.v for tr in raw],
                           av=[tr.av for tr in raw],
                           mv=[tr.mv for tr in raw])
        reduced, deltas = m_orthogonalize_with_reduction(
            pencil.m, basis, gamma=work.config.gamma_gram)
        for label in _reduction_events(len(raw), len(reduced.vectors)):
            work.note(label)
        state["last_deltas"] = deltas
        return [_Triple(v, av, mv) for v, av, mv
                in zip(reduced.vectors, reduced.av, reduced.mv)]

    def after(work, state, i, x_next, kept, out):
        state["p"] = _implicit_direction(work.x, x_next, kept, out)

    def phi(work, state):
        anchor = (state or {}).get("anchor")
        if anchor is None:
            return 1.0
        return work.cos_angle(anchor, work.x)

    return _run_ritz_scheme(pencil, t, x0, config, lambda1_ref, build,
                            after_step=after, phi_fn=phi)


def solve_gd(pencil, t, x0, config, lambda1_ref=None, max_dim=64):
    """Accumulating diagnostic scheme: every preconditioned residual ever
    computed stays in the trial basis (M-orthogonalized increments), so each
    step is globally optimal over the whole preconditioned Krylov-type
    space.  Dense cost grows with the basis; intended for small studies.

    When the basis would exceed ``max_dim`` it is restarted from
    {x, T r, p}.
    """
    if max_dim < 4:
        raise ValueError("max_dim must be at least 4")

    def orth_against(work, q_list, trip):
        acc = trip
        for q in q_list:
            dq = np.vdot(q.v, q.mv).real
            if dq <= 0.0:
                continue
            c = np.vdot(q.v, acc.mv) / dq
            acc = acc.axpy(c, q)
        return acc

    def build(work, state, i, w):
        qs = state.setdefault("q", [])
        p = state.get("p")
        if 2 + len(qs) > max_dim:
            work.note("gd-restart")
            qs = [w]
            if p is not None:
                po = orth_against(work, qs, p)
                if np.vdot(po.v, po.mv).real > 0.0:
                    qs.append(po)
            state["q"] = qs
        else:
            wo = orth_against(work, qs, w)
            dnew = np.vdot(wo.v, wo.mv).real
            dx = np.vdot(work.x.v, work.x.mv).real
            if np.isfinite(dnew) and dnew > 0.0 \
                    and dx <= work.config.gamma_gram * dnew:
                qs.insert(0, wo)
            else:
                work.note("basis-drop")
                if not qs:
                    qs.insert(0, w)   # never leave the basis empty
        return [work.x] + list(qs)

    def run():
        # bypass the TrialBasis 5-vector limit: build bare bases
        work = _Work(pencil, t, x0, config, lambda1_ref)
        work.normalize_x()
        x = work.x
        theta = work.theta_of(x)
        nu = work.nu_of(x, theta)
        work.record(0, theta, nu)
        converged = nu <= config.tol_residual
        iterations = 0
        state = {}
        for i in range(config.max_iters):
            if converged:
                break
            x = work.x
            r = work.residual_of(x, theta)
            w = work.precondition(r)
            triples = build(work, state, i, w)
            vectors = [tr.v for tr in triples]
            av = [tr.av for tr in triples]
            mv = [tr.mv for tr in triples]
            ga, gm, av, mv = _assemble_grams(pencil, vectors, av, mv)
            diag = gm.diagonal().real
            sc = np.where(diag > 0.0, np.sqrt(np.maximum(diag, 1e-300)), 1.0)
            d_inv = 1.0 / sc
            ga_s = ga * np.outer(d_inv, d_inv)
            gm_s = gm * np.outer(d_inv, d_inv)
            try:
                vals, vecs = small_dense_eigensolve(ga_s, gm_s)
            except GramConditioningError:
                work.note("reduce-to-xw")
                vals, vecs = small_dense_eigensolve(ga_s[:2, :2], gm_s[:2, :2])
                vectors, av, mv = vectors[:2], av[:2], mv[:2]
                d_inv = d_inv[:2]
            pick = _pick_smallest(vals, vecs)
            y = vecs[:, pick] * d_inv[: vecs.shape[0]]
            if abs(y[0]) <= 1e-14 * np.abs(y).max():
                work.note("unweighted-ritz")
                coeffs = y
            else:
                coeffs = y / y[0]
            x_next = _Triple(sum(c * v for c, v in zip(coeffs, vectors)),
                             sum(c * v for c, v in zip(coeffs, av)),
                             sum(c * v for c, v in zip(coeffs, mv)))
            x_next = work.refresh(x_next)
            if abs(y[0]) <= 1e-14 * np.abs(y).max():
                state["p"] = x_next.axpy(1.0, work.x)
            else:
                state["p"] = _Triple(
                    sum(c * v for c, v in zip(coeffs[1:], vectors[1:])),
                    sum(c * v for c, v in zip(coeffs[1:], av[1:])),
                    sum(c * v for c, v in zip(coeffs[1:], mv[1:])))
            work.x = x = x_next
            theta = work.theta_of(x)
            nu = work.nu_of(x, theta)
            iterations = i + 1
            work.record(iterations, theta, nu)
            if nu <= config.tol_residual:
                converged = True
        return work.result(theta, nu, converged, iterations,
                           info={"basis_dim_final": 1 + len(state.get("q", []))})

    return run()


# ---------------------------------------------------------------------------
# two-term recurrence schemes: tpcg / tpcga
# ---------------------------------------------------------------------------

class PeakFlagTracker:
    """Residual-peak automaton driving the augmented scheme.

    flag 0 -> 1 when the residual exceeds ``peak_factor`` times the running
    minimum; flag 1 -> 2 once the residual has decreased over
    ``decrease_window`` consecutive steps.  The consumer performs the
    augmentation at flag 2 and calls ``reset``.  Transitions are armed only
    after the residual has dropped below ``activation`` times its initial
    value, so the erratic starting phase cannot trigger spurious peaks.

    Independently of the flag, ``best`` tracks the iterate with the smallest
    residual seen so far.
    """

    def __init__(self, peak_factor=1.5, decrease_window=1, activation=0.1):
        self.peak_factor = peak_factor
        self.decrease_window = decrease_window
        self.activation = activation
        self.flag = 0
        self.armed = False
        self.nu_min = None
        self.nu_prev = None
        self.nu0 = None
        self.best = None
        self._decrease_run = 0

    def observe(self, nu, iterate=None):
        """Feed the residual of the newest iterate; returns emitted events."""
        events = []
        if self.nu0 is None:
            self.nu0 = nu
            self.nu_min = nu
            self.nu_prev = nu
            if iterate is not None:
                self.best = iterate
            return events
        if not self.armed and nu < self.activation * self.nu0:
            self.armed = True
        if nu < self.nu_prev:
            self._decrease_run += 1
        else:
            self._decrease_run = 0
        if self.armed:
            if self.flag == 0 and nu > self.peak_factor * self.nu_min:
                self.flag = 1
                events.append("flag-1")
            elif self.flag == 1 and self._decrease_run >= self.decrease_window:
                self.flag = 2
                events.append("flag-2")
        if nu < self.nu_min:
            self.nu_min = nu
            if iterate is not None:
                self.best = iterate
        self.nu_prev = nu
        return events

    def reset(self):
        self.flag = 0
        self._decrease_run = 0


def _resolve_sigma(config, thetas):
    """Shift used inside the recurrence: either supplied, or guessed after
    the first step from the initial Rayleigh-quotient drop."""
    if config.sigma_guess is not None:
        return config.sigma_guess
    if len(thetas) < 2:
        return None
    return thetas[0] - 10.0 * (thetas[0] - thetas[1])


def _project_out_x(work, trip, alpha):
    """(I - alpha x (Mx)* / x*Mx) applied to a cached triple, using only
    stored products."""
    if alpha == 0.0:
        return trip
    xmx = np.vdot(work.x.v, work.x.mv).real
    c = alpha * np.vdot(work.x.mv, trip.v) / xmx
    return trip.axpy(c, work.x)


def solve_tpcg(pencil, t, x0, config, lambda1_ref=None, _augment_hook=None):
    """Two-term recurrence PCG: direction update plus a 2-dim Ritz step.

    The direction recurrence depends on ``config.tpcg_family``:

    * ``bradbury-fletcher``   p <- iota T r + (gamma_i/gamma_{i-1}) p with
                              iota = 2/||x||_M^2, gamma = iota^2 r*T r
    * ``polak-ribiere``       same iota, numerator gamma_i minus the cross
                              term (iota_i r_i)* T (iota_{i-1} r_{i-1})
    * ``jacobi-shift``        p <- T r + tau v where v is the current (or
                              lagged) projection of p M-orthogonal to x and
                              tau = -(w* T r)/(w* v), w = A v - beta M v,
                              beta = max((sigma + theta)/2, 2 theta_i -
                              theta_{i-1})
    * ``daniel``              jacobi-shift structure with alpha = 2 and
                              beta = theta
    * ``perdon-gambolati``    no projection (alpha = 0), fixed beta = sigma

    The Ritz step runs over {x, p} (standard variant) or {x, projected p}
    (lagged-projector variant, which reuses the projection of the previous
    step as the conjugation direction and is the form whose per-step cost
    stays at one application of A).
    """
    work = _Work(pencil, t, x0, config, lambda1_ref)
    work.normalize_x()
    family = config.tpcg_family
    lagged = config.tpcg_variant == "lagged-projector"
    if family == "daniel":
        alpha = 2.0
    elif family == "perdon-gambolati":
        alpha = 0.0
    else:
        alpha = config.jacobi_alpha

    x = work.x
    theta = work.theta_of(x)
    nu = work.nu_of(x, theta)
    thetas = [theta]

    tracker = None
    if _augment_hook is not None:
        tracker = PeakFlagTracker(config.peak_factor,
                                  config.peak_decrease_window,
                                  config.activation)
        tracker.observe(nu, iterate=x.copy())
        phi0 = 1.0
    else:
        phi0 = None
    work.record(0, theta, nu, phi=phi0)

    converged = nu <= config.tol_residual
    iterations = 0
    p = None            # recurrence direction
    q_lag = None        # stored projected direction (lagged variant)
    gamma_prev = 1.0    # gamma^{(-1)} = 1 by convention
    u_prev = None       # iota_{i-1} T r_{i-1} (polak-ribiere cross term)
    theta_prev = None
    fallback_psd = False

    for i in range(config.max_iters):
        if converged:
            break
        x = work.x
        r = work.residual_of(x, theta)
        w = work.precondition(r)
        fallback_psd = False

        if family in ("bradbury-fletcher", "polak-ribiere"):
            xmx = np.vdot(x.v, x.mv).real
            iota = 2.0 / xmx
            gamma = iota * iota * np.vdot(r, w.v).real
            if p is None:
                p_next = w.scaled(iota)
            else:
                if family == "bradbury-fletcher":
                    tau = gamma / gamma_prev
                else:
                    cross = iota * np.vdot(r, u_prev.v).real
                    tau = (gamma - cross) / gamma_prev
                p_next = w.scaled(iota).plus(tau, p)
            if family == "polak-ribiere":
                u_prev = w.scaled(iota)
            gamma_prev = gamma
            basis_dir = p_next
        else:
            if p is None:
                p_next = w.copy()
                basis_dir = _project_out_x(work, p_next, alpha) if lagged \
                    else p_next
                if lagged:
                    q_lag = basis_dir
            else:
                sigma = _resolve_sigma(config, thetas)
                if family == "perdon-gambolati":
                    if sigma is None:
                        sigma = thetas[-1] - 10.0 * abs(thetas[-1])
                    beta = min(sigma, theta)
                else:
                    sigma_eff = theta if sigma is None else min(sigma, theta)
                    beta = max(0.5 * (sigma_eff + theta),
                               2.0 * theta - (theta_prev if theta_prev
                                              is not None else theta))
                    if family == "daniel":
                        beta = theta
                v = q_lag if lagged else _project_out_x(work, p, alpha)
                wdir = v.av - beta * v.mv
                denom = np.vdot(wdir, v.v).real
                if config.debug_checks and not lagged and alpha == 1.0:
                    chk = abs(np.vdot(wdir, x.v))
                    scale = np.linalg.norm(wdir) * np.linalg.norm(x.v)
                    assert chk <= 1e-8 * max(scale, 1e-300), \
                        "conjugation identity violated: %.3e" % (chk / scale)
                if denom == 0.0 or not np.isfinite(denom):
                    work.note("psd-fallback")
                    fallback_psd = True
                    p_next = w.copy()
                    basis_dir = p_next
                    if lagged:
                        q_lag = _project_out_x(work, p_next, alpha)
                else:
                    tau = -np.vdot(wdir, w.v) / denom
                    tau = tau.real if abs(tau.imag) < 1e-30 * abs(tau.real + 1e-300) \
                        else tau
                    p_next = w.plus(tau, v if lagged else p)
                    basis_dir = _project_out_x(work, p_next, alpha) if lagged \
                        else p_next
                    if lagged:
                        q_lag = basis_dir

        triples = [x, w] if fallback_psd else [x, basis_dir]
        if tracker is not None and tracker.flag == 2 and not fallback_psd:
            # widening with a best iterate that is numerically dependent on
            # the current one adds nothing and only degrades the Gram; hold
            # the flag and wait until the iterates have actually separated
            if tracker.best is not None \
                    and work.cos_angle(tracker.best, x) <= 1.0 - 1e-12:
                triples = triples + [tracker.best]
                work.note("augment")
                tracker.reset()
        try:
            out = rrw(pencil, _basis_from(triples))
        except DegenerateSubspace:
            if fallback_psd:
                raise
            work.note("psd-fallback")
            out = rrw(pencil, _basis_from([x, w]))
            p_next = w.copy()
            if lagged:
                q_lag = _project_out_x(work, p_next, alpha)
        for label in out.events:
            work.note(label)
        x_next, _ = _adopt(out, triples)

        # pin the cache to fresh products and renormalize; the carried
        # direction state of the norm-sensitive families scales the opposite
        # way (see the recurrences above: the update mixes 1/||x||_M^2 with
        # the carried direction), so continuing the same trajectory needs
        # p -> s p, gamma -> s^2 gamma, u -> s u under x -> x/s.
        fresh = work.triple(x_next.v)
        s = np.sqrt(np.vdot(fresh.v, fresh.mv).real)
        if not (np.isfinite(s) and s > 0.0):
            raise NumericalBreakdown("iterate has non-positive M-norm %.3e" % s)
        x_next = fresh.scaled(1.0 / s)
        if s != 1.0 and family in ("bradbury-fletcher", "polak-ribiere"):
            for trip in (p_next, u_prev):
                if trip is not None:
                    trip.v *= s
                    trip.av *= s
                    trip.mv *= s
            gamma_prev *= s * s

        theta_prev = theta
        work.x = x = x_next
        theta = work.theta_of(x)
        thetas.append(theta)
        p = p_next
        nu = work.nu_of(x, theta)
        iterations = i + 1
        phi = None
        flag_events = ()
        if tracker is not None:
            flag_events = tuple(tracker.observe(nu, iterate=x.copy()))
            phi = work.cos_angle(tracker.best, x) if tracker.best is not None \
                else None
        work.record(iterations, theta, nu, phi=phi, extra_events=flag_events)
        if nu <= config.tol_residual:
            converged = True

    info = {"sigma_used": _resolve_sigma(config, thetas),
            "family": family, "variant": config.tpcg_variant}
    return work.result(theta, nu, converged, iterations, info=info)


def solve_tpcga(pencil, t, x0, config, lambda1_ref=None):
    """tpcg with residual-peak-triggered augmentation.

    Runs the two-term recurrence while watching the residual history via
    PeakFlagTracker.  After a detected peak has started to decay (flag 2),
    the 2-dim Ritz step is widened once with the best iterate seen so far,
    discarding the spurious component the recurrence picked up.
    """
    return solve_tpcg(pencil, t, x0, config, lambda1_ref=lambda1_ref,
                      _augment_hook=True)


_SOLVERS = {
    "pcg": None,  # handled separately (extra argument)
    "psd": solve_psd,
    "lopcg": solve_lopcg,
    "lopcgx": solve_lopcgx,
    "lopcga": solve_lopcga,
    "tpcg": solve_tpcg,
    "tpcga": solve_tpcga,
    "gd": solve_gd,
}


def solve(pencil, t, x0, config, lambda1_ref=None):
    """Dispatch on ``config.method``; see the individual solver docstrings."""
    if config.method == "pcg":
        return solve_pcg_heuristic(pencil, t, config.lambda1_input, x0, config,
                                   lambda1_ref=lambda1_ref)
    return _SOLVERS[config.method](pencil, t, x0, config,
                                   lambda1_ref=lambda1_ref)
