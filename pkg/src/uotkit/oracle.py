"""Ground-truth solvers and approximation-error studies.

* :func:`exact_ot_lp` solves balanced OT exactly with the transportation
  simplex and rejects uncertified results.
* :func:`uot_reference` solves the squared-l2 UOT problem to near machine
  precision with a semismooth Newton method on the relaxed dual.
* :func:`theorem2_check`, :func:`theorem4_check` and :func:`tau_scaling_study`
  compare computed quantities with their closed-form bounds or fit iteration
  counts against ``tau``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import CostMatrix, Measure, TransportPlan, marginal_gap, reg_objective, uot_objective
from .dual import ReducedDualPoint, recover_plan
from .exceptions import UOTError, ValidationError
from .lp import transportation_simplex, vertex_enumeration
from .rounding import FeasiblePlan
from .solvers import GemConfig, gem_uot, sinkhorn_uot

__all__ = [
    "exact_ot_lp",
    "vertex_enumeration",
    "UotReference",
    "uot_reference",
    "reference_eta",
    "uot_kl_value",
    "BoundReport",
    "theorem2_bound",
    "theorem4_constant",
    "theorem2_check",
    "theorem4_check",
    "TauStudyRow",
    "TauStudy",
    "r_squared",
    "tau_scaling_study",
]


def exact_ot_lp(C, a, b):
    """Exact balanced OT value and plan, certified by complementary slackness."""
    C = C if isinstance(C, CostMatrix) else CostMatrix(C)
    a = a if isinstance(a, Measure) else Measure(a)
    b = b if isinstance(b, Measure) else Measure(b)
    sol = transportation_simplex(C.entries, a.weights, b.weights)
    if not sol.certified:
        raise UOTError(
            f"LP optimality certificate failed (dual violation {sol.max_dual_violation:.3e}, "
            f"gap {sol.duality_gap:.3e})"
        )
    return sol.value, FeasiblePlan(sol.plan, a, b)


@dataclass
class UotReference:
    """High-precision solution of the squared-l2 UOT problem at a given ``eta``.

    Unpacks as ``(value, plan)`` where ``value`` is the regularized optimum
    ``g_eta(X^eta)``.
    """

    value: float
    plan: TransportPlan
    primal_value: float
    dual: ReducedDualPoint
    eta: float
    grad_norm: float
    converged: bool
    newton_steps: int

    def __iter__(self):
        return iter((self.value, self.plan))


def _ha_parts(C, a, b, tau, eta, u, v):
    s = u[:, None] + v[None, :] - C
    h = np.maximum(s, 0.0)
    eu = a * np.exp(-u / tau)
    ev = b * np.exp(-v / tau)
    val = tau * (eu.sum() + ev.sum()) + float(np.sum(h * h)) / (4.0 * eta)
    g = np.concatenate([-eu + h.sum(axis=1) / (2.0 * eta), -ev + h.sum(axis=0) / (2.0 * eta)])
    return val, g, s > 0, eu, ev


def _newton_ha(C, a, b, tau, eta, u, v, tol, max_steps):
    """Damped semismooth Newton on the relaxed dual; returns ``(u, v, steps, grad_norm)``."""
    n = u.size
    val, g, act, eu, ev = _ha_parts(C, a, b, tau, eta, u, v)
    steps = 0
    for steps in range(max_steps + 1):
        gn = float(np.abs(g).max())
        if gn <= tol or steps == max_steps:
            break
        A = act.astype(np.float64) / (2.0 * eta)
        H = np.zeros((2 * n, 2 * n))
        H[np.diag_indices(2 * n)] = np.concatenate([eu / tau + A.sum(axis=1), ev / tau + A.sum(axis=0)])
        H[:n, n:] = A
        H[n:, :n] = A.T
        d = -np.linalg.solve(H, g)
        slope = float(g @ d)
        t = 1.0
        while True:
            un, vn = u + t * d[:n], v + t * d[n:]
            nv, ng, nact, neu, nev = _ha_parts(C, a, b, tau, eta, un, vn)
            if nv <= val + 1e-4 * t * slope:
                break
            # near the optimum the value is flat to rounding; accept on gradient progress
            if abs(nv - val) <= 1e-14 * abs(val) and np.abs(ng).max() < gn:
                break
            t *= 0.5
            if t < 1e-20:
                return u, v, steps, gn
        u, v, val, g, act, eu, ev = un, vn, nv, ng, nact, neu, nev
    return u, v, steps, float(np.abs(g).max())


def uot_reference(problem, eta, tol=1e-11, max_newton=200):
    """Solve the squared-l2 UOT problem to high precision.

    Minimizes the relaxed dual ``h_a`` with a damped semismooth Newton
    method, continuing in ``eta`` from ``max(eta, 0.01 ||C||_inf)`` down to
    the target in factors of 10 and warm-starting each stage. The plan is
    recovered as ``max(0, u_i + v_j - C_ij) / (2 eta)``.

    ``converged`` is false when the final gradient sup-norm exceeds
    ``tol``; for very small ``eta`` rounding alone puts a floor of roughly
    ``1e-16 D / eta`` on that norm, so the flag is informational and the
    solution is still returned.
    """
    if not eta > 0:
        raise ValidationError("eta must be positive")
    C = problem.C
    a, b = problem.a.weights, problem.b.weights
    tau = problem.tau
    n = problem.n
    u = np.zeros(n)
    v = np.zeros(n)
    stage_eta = max(eta, 1e-2 * problem.cost.max_abs)
    total = 0
    while True:
        final = stage_eta <= eta
        u, v, steps, gn = _newton_ha(
            C, a, b, tau, stage_eta, u, v, tol, max_newton if final else 60
        )
        total += steps
        if final:
            break
        stage_eta = max(eta, stage_eta / 10.0)
    dual = ReducedDualPoint(u, v)
    plan = recover_plan(problem, eta, dual)
    return UotReference(
        value=reg_objective(problem, eta, plan),
        plan=plan,
        primal_value=uot_objective(problem, plan),
        dual=dual,
        eta=eta,
        grad_norm=gn,
        converged=gn <= tol,
        newton_steps=total,
    )


def reference_eta(problem):
    """Regularization ``1e-8 (alpha + beta)^2`` used to approximate the unregularized optimum."""
    q = problem.a.total + problem.b.total
    return 1e-8 * q * q


def uot_kl_value(problem):
    """Approximate ``UOT_KL`` by ``f(X^eta)`` at :func:`reference_eta`.

    ``f(X^eta)`` over-estimates the optimum by at most ``eta (alpha + beta)^2 / 4``.
    Returns ``(value, reference)``.
    """
    ref = uot_reference(problem, reference_eta(problem))
    return ref.primal_value, ref


@dataclass
class BoundReport:
    tau: float
    empirical_gap: float
    theoretical_bound: float
    satisfied: bool
    lower_ok: bool = True

    def as_row(self):
        return {
            "tau": self.tau,
            "empirical": self.empirical_gap,
            "bound": self.theoretical_bound,
            "satisfied": self.satisfied and self.lower_ok,
        }


def _bound_report(tau, empirical, bound, lower_ok=True):
    return BoundReport(tau, empirical, bound, bool(empirical <= bound * (1.0 + 1e-6)), lower_ok)


def _require_simplex(problem):
    for name, m in (("a", problem.a), ("b", problem.b)):
        if abs(m.total - 1.0) > 1e-12:
            raise ValidationError(f"{name} must lie on the probability simplex (total {m.total!r})")


def theorem2_bound(problem, eta):
    """Marginal-gap bound ``2 n ||C||_inf / tau + 4 n eta / tau``."""
    n = problem.n
    return 2.0 * n * problem.cost.max_abs / problem.tau + 4.0 * n * eta / problem.tau


def theorem4_constant(problem):
    """``M = ln 2 ||C||_inf^2 (n + 3 kappa)^2 + 2 n ||C||_inf^2``.

    >>> from uotkit.core import UotProblem
    >>> round(theorem4_constant(UotProblem([[0., 1.], [1., 0.]], [.5, .5], [.5, .5], 1.0)), 4)
    48.3614
    """
    c = problem.cost.max_abs
    n = problem.n
    kappa = 1.0 / min(problem.a.min_entry, problem.b.min_entry)
    return math.log(2.0) * c * c * (n + 3.0 * kappa) ** 2 + 2.0 * n * c * c


def theorem2_check(problem, tau_grid, eta=None):
    """Marginal gap of the (near-)optimal UOT plan against ``2n||C||/tau`` plus eta slack.

    ``eta`` defaults to :func:`reference_eta`. One :class:`BoundReport` per grid point.
    """
    _require_simplex(problem)
    out = []
    for tau in tau_grid:
        p = problem.with_tau(float(tau))
        e = reference_eta(p) if eta is None else eta
        ref = uot_reference(p, e)
        gap = marginal_gap(ref.plan, p.a, p.b)
        out.append(_bound_report(float(tau), gap, theorem2_bound(p, e)))
    return out


def theorem4_check(problem, tau_grid, lower_tol=1e-7):
    """``OT - UOT_KL`` against ``M / tau``, plus the lower sandwich ``OT - UOT_KL >= -lower_tol``."""
    _require_simplex(problem)
    ot_value, _ = exact_ot_lp(problem.cost, problem.a, problem.b)
    M = theorem4_constant(problem)
    out = []
    for tau in tau_grid:
        p = problem.with_tau(float(tau))
        uot, _ = uot_kl_value(p)
        gap = ot_value - uot
        out.append(_bound_report(float(tau), gap, M / float(tau), lower_ok=gap >= -lower_tol))
    return out


def r_squared(x, y):
    """Coefficient of determination of the least-squares line ``y ~ c0 + c1 x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        return float("nan")
    c1, c0 = np.polyfit(x, y, 1)
    resid = y - (c0 + c1 * x)
    tot = float(np.sum((y - y.mean()) ** 2))
    if tot == 0.0:
        return 1.0
    return 1.0 - float(np.sum(resid ** 2)) / tot


@dataclass
class TauStudyRow:
    tau: float
    solver: str
    iterations: int
    censored: bool
    reference: float
    final_objective: float


@dataclass
class TauStudy:
    epsilon: float
    sinkhorn_eta: float
    rows: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)

    def counts(self, solver):
        return [(r.tau, r.iterations) for r in self.rows if r.solver == solver and not r.censored]


def _fit(study, solver):
    pts = study.counts(solver)
    if len(pts) < 2:
        return {"log_r2": None, "linear_r2": None, "points": len(pts)}
    taus = np.array([p[0] for p in pts])
    its = np.array([p[1] for p in pts], dtype=np.float64)
    return {
        "log_r2": r_squared(np.log(taus), its),
        "linear_r2": r_squared(taus, its),
        "points": len(pts),
    }


def _calibrate_sinkhorn_eta(problem, epsilon, target, max_iters, halvings=12):
    """Largest ``eta`` in ``epsilon, epsilon/2, ...`` whose Sinkhorn run reaches ``target``."""
    eta = epsilon
    for _ in range(halvings):
        _, rep = sinkhorn_uot(problem, eta, max_iters=max_iters, target=target)
        if rep.stop_reason.value == "gap_tol":
            return eta
        eta /= 2.0
    return eta


def tau_scaling_study(problem, tau_grid, epsilon, sinkhorn_eta=None, gem_max_iters=200_000,
                      sinkhorn_max_iters=20_000_000, calibration_iters=50_000):
    """Iterations needed by GEM-UOT and Sinkhorn to reach the same primal accuracy.

    For each ``tau`` the reference ``UOT_KL`` comes from :func:`uot_kl_value`
    and both solvers stop once ``f(X) <= UOT_KL + epsilon``. GEM-UOT uses
    ``eta = epsilon / (2R)``; Sinkhorn uses ``sinkhorn_eta`` or, if that is
    ``None``, the largest ``epsilon / 2^k`` that reaches the target at the
    smallest ``tau`` within ``calibration_iters``. Runs that hit their
    iteration cap are kept as censored rows and excluded from the fits.

    ``fits[solver]`` holds the R^2 of ``iterations ~ log(tau)`` and
    ``iterations ~ tau`` over uncensored points.
    """
    taus = [float(t) for t in tau_grid]
    if not taus or any(not (t > 0 and math.isfinite(t)) for t in taus):
        raise ValidationError("tau grid must be a nonempty list of positive reals")
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    refs = {}
    for tau in taus:
        refs[tau], _ = uot_kl_value(problem.with_tau(tau))
    if sinkhorn_eta is None:
        t0 = min(taus)
        sinkhorn_eta = _calibrate_sinkhorn_eta(
            problem.with_tau(t0), epsilon, refs[t0] + epsilon, calibration_iters
        )
    study = TauStudy(epsilon=epsilon, sinkhorn_eta=sinkhorn_eta)
    for tau in taus:
        p = problem.with_tau(tau)
        target = refs[tau] + epsilon
        _, rep = gem_uot(
            p, GemConfig(epsilon=epsilon, max_iters=gem_max_iters, use_budget=False), target=target
        )
        study.rows.append(TauStudyRow(tau, "gem-uot", rep.iterations, rep.final_objective > target,
                                      refs[tau], rep.final_objective))
        _, rep = sinkhorn_uot(p, sinkhorn_eta, max_iters=sinkhorn_max_iters, target=target)
        study.rows.append(TauStudyRow(tau, "sinkhorn", rep.iterations, rep.final_objective > target,
                                      refs[tau], rep.final_objective))
    for solver in ("gem-uot", "sinkhorn"):
        study.fits[solver] = _fit(study, solver)
    return study
