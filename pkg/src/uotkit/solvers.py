"""First-order UOT solvers: GEM-UOT, GEM-RUOT and an entropic Sinkhorn baseline.

GEM-UOT minimizes the constrained squared-l2 dual ``h_eta = f_eta + w_eta``
with gradient extrapolation and Bregman prox steps taken w.r.t. ``w_eta``;
GEM-RUOT runs the convex variant on the relaxed dual ``h_a`` with Euclidean
box projections; Sinkhorn performs exact alternating minimization of the
entropic dual in log space.
"""

import enum
import math
import time
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .core import (
    TransportPlan,
    derived_constants,
    marginal_gap,
    reg_objective,
    uot_objective,
)
from .dual import (
    BoxV,
    DualPoint,
    ReducedDualPoint,
    lagrange_dual_value,
    make_box,
    relaxed_dual_ha,
)
from .exceptions import DivergenceError, ValidationError

__all__ = [
    "StopReason",
    "GemConfig",
    "SolveReport",
    "ProxResult",
    "default_eta",
    "delta_surrogate",
    "iteration_budget",
    "ruot_iteration_budget",
    "prox_map",
    "box_project",
    "gem_uot",
    "gem_ruot",
    "sinkhorn_uot",
    "sinkhorn_u_update",
    "sinkhorn_v_update",
]


class StopReason(str, enum.Enum):
    GAP_TOL = "gap_tol"
    ITER_BUDGET = "iter_budget"
    MAX_ITERS = "max_iters"


@dataclass
class GemConfig:
    """Controls for the GEM solvers.

    ``eta=None`` selects ``epsilon / (2R)``; ``gap_tol=None`` selects
    ``epsilon / 2``; ``inner_tol=None`` selects ``min(1e-9, 1e-4 * epsilon)``.
    Set ``use_budget=False`` to ignore the theoretical iteration budget and
    rely on ``gap_tol``/``max_iters`` alone.
    """

    epsilon: float = 1e-2
    eta: float = None
    max_iters: int = 200_000
    gap_tol: float = None
    inner_tol: float = None
    inner_max_iters: int = 500
    record_trace: bool = False
    use_budget: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if self.eta is not None and not self.eta > 0:
            raise ValidationError("eta must be positive")
        if int(self.max_iters) < 1:
            raise ValidationError("max_iters must be >= 1")
        if self.gap_tol is not None and not self.gap_tol > 0:
            raise ValidationError("gap_tol must be positive")
        if self.inner_tol is not None and not self.inner_tol > 0:
            raise ValidationError("inner_tol must be positive")
        if int(self.inner_max_iters) < 1:
            raise ValidationError("inner_max_iters must be >= 1")

    def resolved_eta(self, problem):
        return self.eta if self.eta is not None else default_eta(problem, self.epsilon)

    def resolved_gap_tol(self):
        return self.gap_tol if self.gap_tol is not None else self.epsilon / 2.0

    def resolved_inner_tol(self):
        return self.inner_tol if self.inner_tol is not None else min(1e-9, 1e-4 * self.epsilon)


@dataclass
class SolveReport:
    iterations: int
    final_objective: float
    final_reg_objective: float
    duality_gap_trace: list
    marginal_gap: float
    wall_time: float
    stop_reason: StopReason
    solver: str = ""
    tau: float = float("nan")
    eta: float = float("nan")
    budget: int = 0
    inexact_prox_steps: int = 0
    trace: list = field(default_factory=list)
    dual_point: object = None

    def to_dict(self, timing=True):
        d = asdict(self)
        d["stop_reason"] = self.stop_reason.value
        d.pop("dual_point")
        d.pop("trace")
        if not timing:
            d.pop("wall_time")
        return d


def default_eta(problem, epsilon):
    """``epsilon / (2R)`` with ``R = (alpha + beta)^2 / 4``."""
    q = problem.a.total + problem.b.total
    return 2.0 * epsilon / (q * q)


def delta_surrogate(problem, constants):
    """Upper bound on the GEM potential at ``x0 = 0``.

    Sums the bounds ``w_eta(x*) <= split * n * D^2 + eta * R``,
    ``h_eta(0) - h_eta(x*) <= tau (alpha + beta)`` and
    ``||grad f_eta(0)||^2 / mu = (||a||^2 + ||b||^2) / mu``.
    """
    k = constants
    a, b = problem.a.weights, problem.b.weights
    w_star = k.split * k.n * k.D ** 2 + k.eta * k.R
    return w_star + problem.tau * k.q + float(a @ a + b @ b) / k.mu


def iteration_budget(constants, problem, eta, epsilon, delta_bound):
    """Number of GEM-UOT iterations that guarantees an ``epsilon``-accurate plan.

    ``ceil(4 (1 + sqrt(1 + 16 L/mu)) log(4 n^2 sqrt(delta) / eta * max(L1/eps,
    e^{D/tau}/min mass, 1/(alpha+beta))))``, floored at 1. The max is
    evaluated in log space so that ``e^{D/tau}`` cannot overflow.
    """
    k = constants
    if not (delta_bound > 0 and eta > 0 and epsilon > 0 and k.L1 > 0):
        raise ValidationError("iteration budget needs positive delta_bound, eta, epsilon and L1")
    n = problem.n
    m = min(k.a_min, k.b_min)
    log_max = max(math.log(k.L1 / epsilon), k.D / k.tau - math.log(m), -math.log(k.q))
    log_arg = math.log(4.0 * n * n) + 0.5 * math.log(delta_bound) - math.log(eta) + log_max
    if not math.isfinite(log_arg):
        raise ValidationError("degenerate constants in iteration budget")
    budget = 4.0 * (1.0 + math.sqrt(1.0 + 16.0 * k.L / k.mu)) * log_arg
    return max(1, int(math.ceil(budget)))


def ruot_iteration_budget(constants, epsilon):
    """``ceil(sqrt(12 L_a n D^2 / epsilon))`` iterations for GEM-RUOT."""
    k = constants
    return max(1, int(math.ceil(math.sqrt(12.0 * k.L_a * k.n * k.D ** 2 / epsilon))))


def box_project(x, box):
    """Clamp ``(u, v)`` coordinatewise into ``box``."""
    u = np.clip(x.u, box.u_lo, box.upper)
    v = np.clip(x.v, box.v_lo, box.upper)
    return ReducedDualPoint(u, v)


@dataclass
class ProxResult:
    point: DualPoint
    objective: float
    kkt_residual: float
    iterations: int
    exact: bool


def _prox_terms(y, zy, zt, wt, C, cy, dt, n):
    """Value and gradient of the reduced prox objective in ``y = (u, v)``.

    ``phi(y) = cy/2 ||y - zy||^2 + dt/2 sum (max(s_ij, wt_ij) - zt_ij)^2`` with
    ``s = u_i + v_j - C_ij`` and ``wt = max(zt, 0)``.
    """
    u, v = y[:n], y[n:]
    s = u[:, None] + v[None, :] - C
    act = s > wt
    r = np.where(act, s - zt, 0.0)
    tt = np.where(act, s, wt)
    dy = y - zy
    val = 0.5 * cy * float(dy @ dy) + 0.5 * dt * float(np.sum((tt - zt) ** 2))
    grad = cy * dy
    grad[:n] += dt * r.sum(axis=1)
    grad[n:] += dt * r.sum(axis=0)
    return val, grad, act, tt


def _newton_direction(y, g, act, cy, dt, lo, hi, n):
    """Projected Newton direction: Newton on free coordinates, scaled gradient on bound ones."""
    A = act.astype(np.float64)
    diag = cy + dt * np.concatenate([A.sum(axis=1), A.sum(axis=0)])
    at_bound = ((y <= lo) & (g > 0)) | ((y >= hi) & (g < 0))
    free = ~at_bound
    d = -g / diag
    if free.any():
        H = np.zeros((2 * n, 2 * n))
        H[:n, n:] = dt * A
        H[n:, :n] = dt * A.T
        H[np.diag_indices(2 * n)] = diag
        try:
            d[free] = -np.linalg.solve(H[np.ix_(free, free)], g[free])
        except np.linalg.LinAlgError:
            pass
    return d


def _solve_reduced_prox(zy, zt, C, cy, dt, lo, hi, y0, tol, max_iters):
    """Projected semismooth Newton for ``min phi(y)`` over ``lo <= y <= hi``.

    ``phi`` is strongly convex and piecewise quadratic, so Newton steps on the
    free coordinates with an Armijo search along the projection arc identify
    the active pieces in a few iterations. Returns ``(y, t, value, kkt, iters, exact)``
    where ``kkt`` is the length of the projected Newton step (in
    dual-potential units). The Hessian is badly conditioned along
    ``(1, -1)``, where only ``cy`` acts, so a diagonally scaled gradient
    would understate the distance to the minimizer.
    """
    n = zy.size // 2
    wt = np.maximum(zt, 0.0)
    y = np.clip(y0, lo, hi)
    val, g, act, tt = _prox_terms(y, zy, zt, wt, C, cy, dt, n)
    kkt = np.inf
    it = 0
    for it in range(max_iters + 1):
        d = _newton_direction(y, g, act, cy, dt, lo, hi, n)
        kkt = float(np.max(np.abs(np.clip(y + d, lo, hi) - y)))
        if kkt <= tol or it == max_iters:
            break
        step = 1.0
        accepted = False
        while step > 1e-12:
            y_new = np.clip(y + step * d, lo, hi)
            val_new, g_new, act_new, tt_new = _prox_terms(y_new, zy, zt, wt, C, cy, dt, n)
            decrease = float(g @ (y - y_new))
            if val_new <= val - 1e-4 * decrease or (
                abs(val_new - val) <= 1e-13 * max(1.0, abs(val)) and decrease >= 0
                and np.max(np.abs(g_new)) <= np.max(np.abs(g))
            ):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        y, val, g, act, tt = y_new, val_new, g_new, act_new, tt_new
    return y, tt, val, kkt, it, kkt <= tol


def prox_map(g, x0, theta, box, problem, eta, constants, tol=1e-9, max_iters=500):
    """Bregman prox step of GEM-UOT over ``V_D`` intersected with the feasible set.

    Minimizes ``<g, x> + w_eta(x) + theta * P(x0, x)`` where ``P`` is the
    Bregman distance of ``w_eta`` divided by ``mu``. Because ``w_eta`` is a
    diagonal quadratic this is a weighted projection of a shifted point;
    the ``t`` block is eliminated in closed form and the remaining
    ``(u, v)`` problem is solved by :func:`_solve_reduced_prox`.

    Parameters
    ----------
    g : ndarray, shape (n**2 + 2n,)
        Linear term in the flat dual layout.
    x0 : DualPoint
        Prox center, assumed feasible.
    theta : float
        Prox weight, must be positive.
    """
    if not theta > 0:
        raise ValidationError("theta must be positive")
    n = problem.n
    g = np.asarray(g, dtype=np.float64)
    c = constants.split
    r = theta / constants.mu
    y0 = np.concatenate([x0.u, x0.v])
    cy = c * (1.0 + r)
    dt = (1.0 + r) / (2.0 * eta)
    zy = (c * r * y0 - g[:2 * n]) / cy
    zt = (r * x0.t - 2.0 * eta * g[2 * n:].reshape(n, n)) / (1.0 + r)
    lo = box.lower
    hi = np.full(2 * n, box.upper)
    y, tt, _, kkt, iters, exact = _solve_reduced_prox(
        zy, zt, problem.C, cy, dt, lo, hi, y0, tol, max_iters
    )
    point = DualPoint(y[:n], y[n:], tt)
    obj = float(g @ point.flat())
    obj += 0.5 * c * float(y @ y) + float(np.sum(tt * tt)) / (4.0 * eta)
    dy = y - y0
    dtt = tt - x0.t
    obj += theta * (0.5 * c * float(dy @ dy) + float(np.sum(dtt * dtt)) / (4.0 * eta)) / constants.mu
    return ProxResult(point, obj, kkt, iters, exact)


def _grad_f_uv(problem, u, v, split):
    tau = problem.tau
    gu = -problem.a.weights * np.exp(-u / tau) - split * u
    gv = -problem.b.weights * np.exp(-v / tau) - split * v
    return np.concatenate([gu, gv])


def _trace_row(problem, eta, it, X, gap):
    return {
        "iter": it,
        "f": uot_objective(problem, X),
        "g_eta": reg_objective(problem, eta, X),
        "dual_gap": gap,
        "marginal_gap": marginal_gap(X, problem.a, problem.b),
    }


def gem_uot(problem, config=None, target=None):
    """Solve squared-l2 regularized UOT with gradient extrapolation.

    Returns ``(plan, report)``. The plan is ``t_bar / (2 eta)`` where
    ``t_bar`` is the theta-weighted average of the prox iterates. The loop
    stops at the first of: certified duality gap ``<= gap_tol``, the
    theoretical iteration budget (when ``config.use_budget``), or
    ``config.max_iters``. When ``target`` is given the loop also stops as
    soon as the primal objective ``f`` of the current plan is ``<= target``
    (used by scaling studies that compare solvers at equal primal accuracy).
    """
    config = config or GemConfig()
    start = time.perf_counter()
    n = problem.n
    eta = config.resolved_eta(problem)
    k = derived_constants(problem, eta)
    if not (k.mu > 0 and math.isfinite(k.L)):
        raise ValidationError("degenerate smoothness constants (mu underflowed)")
    box = make_box(problem, k)
    budget = iteration_budget(k, problem, eta, config.epsilon, delta_surrogate(problem, k))
    limit = min(int(config.max_iters), budget) if config.use_budget else int(config.max_iters)
    gap_tol = config.resolved_gap_tol()
    inner_tol = config.resolved_inner_tol()

    ratio = 1.0 + math.sqrt(1.0 + 16.0 * k.L / k.mu)
    alpha = 1.0 - 1.0 / ratio
    psi = 1.0 / (1.0 - alpha) - 1.0
    rho = alpha * k.mu / (1.0 - alpha)

    x_prev = DualPoint.zeros(n)
    low_uv = np.zeros(2 * n)
    low_t = np.zeros((n, n))
    y_prev = np.zeros(2 * n)
    y_prev2 = np.zeros(2 * n)
    g_full = np.zeros(n * n + 2 * n)
    bar_uv = np.zeros(2 * n)
    bar_t = np.zeros((n, n))
    weight_ratio = 0.0
    gaps = []
    trace = []
    inexact = 0
    stop = StopReason.MAX_ITERS if limit == config.max_iters else StopReason.ITER_BUDGET
    it = 0
    for it in range(1, limit + 1):
        g_full[:2 * n] = y_prev + alpha * (y_prev - y_prev2)
        res = prox_map(g_full, x_prev, rho, box, problem, eta, k, inner_tol, config.inner_max_iters)
        if not res.exact:
            inexact += 1
        x = res.point
        xuv = np.concatenate([x.u, x.v])
        if not (np.all(np.isfinite(xuv)) and np.all(np.isfinite(x.t))):
            raise DivergenceError(f"non-finite GEM-UOT iterate at iteration {it}")
        low_uv = (xuv + psi * low_uv) / (1.0 + psi)
        low_t = (x.t + psi * low_t) / (1.0 + psi)
        y_prev2 = y_prev
        y_prev = _grad_f_uv(problem, low_uv[:n], low_uv[n:], k.split)
        # theta_t = alpha^{-t}: S_t / theta_t obeys q_t = 1 + alpha * q_{t-1}
        weight_ratio = 1.0 + alpha * weight_ratio
        w = 1.0 / weight_ratio
        bar_uv += w * (xuv - bar_uv)
        bar_t += w * (x.t - bar_t)
        x_prev = x

        bar = DualPoint(bar_uv[:n], bar_uv[n:], bar_t)
        X = bar_t / (2.0 * eta)
        gap = reg_objective(problem, eta, X) - lagrange_dual_value(problem, eta, bar)
        if not math.isfinite(gap):
            raise DivergenceError(f"non-finite duality gap at iteration {it}")
        gaps.append(gap)
        if config.record_trace:
            trace.append(_trace_row(problem, eta, it, X, gap))
        if gap <= gap_tol or (target is not None and uot_objective(problem, X) <= target):
            stop = StopReason.GAP_TOL
            break

    X = bar_t / (2.0 * eta)
    plan = TransportPlan(X)
    report = SolveReport(
        iterations=it,
        final_objective=uot_objective(problem, X),
        final_reg_objective=reg_objective(problem, eta, X),
        duality_gap_trace=gaps,
        marginal_gap=marginal_gap(X, problem.a, problem.b),
        wall_time=time.perf_counter() - start,
        stop_reason=stop,
        solver="gem-uot",
        tau=problem.tau,
        eta=eta,
        budget=budget,
        inexact_prox_steps=inexact,
        trace=trace,
        dual_point=DualPoint(bar_uv[:n], bar_uv[n:], bar_t),
    )
    return plan, report


def gem_ruot(problem, config=None):
    """Approximate the UOT value with the convex GEM variant on the relaxed dual.

    Returns ``(value, plan, report)`` where ``value = F_a(x_bar)`` estimates
    the UOT distance and ``plan`` is the heuristic
    ``max(0, u_bar_i + v_bar_j - C_ij) / (2 eta)``. Iteration ``t`` (from 1)
    uses ``alpha_t = (t-1)/t``, ``psi_t = (t-1)/2``, ``rho_t = 6 L_a / t`` and
    averaging weights ``theta_t = t``.

    The gap used for early stopping is ``g_eta(plan) - F_a(x_bar)``.
    """
    config = config or GemConfig()
    start = time.perf_counter()
    n = problem.n
    eta = config.resolved_eta(problem)
    k = derived_constants(problem, eta)
    box = make_box(problem, k)
    budget = ruot_iteration_budget(k, config.epsilon)
    limit = min(int(config.max_iters), budget) if config.use_budget else int(config.max_iters)
    gap_tol = config.resolved_gap_tol()
    q = problem.tau * (problem.a.total + problem.b.total)
    lo = box.lower
    hi = box.upper

    x_prev = np.zeros(2 * n)
    x_low = np.zeros(2 * n)
    y_prev = np.zeros(2 * n)
    y_prev2 = np.zeros(2 * n)
    bar = np.zeros(2 * n)
    theta_sum = 0.0
    gaps = []
    trace = []
    stop = StopReason.MAX_ITERS if limit == config.max_iters else StopReason.ITER_BUDGET
    it = 0
    for it in range(1, limit + 1):
        alpha_t = (it - 1.0) / it
        psi_t = (it - 1.0) / 2.0
        rho_t = 6.0 * k.L_a / it
        y_til = y_prev + alpha_t * (y_prev - y_prev2)
        x = np.clip(x_prev - y_til / rho_t, lo, hi)
        x_low = (x + psi_t * x_low) / (1.0 + psi_t)
        _, grad = relaxed_dual_ha(problem, eta, x_low)
        y_prev2, y_prev = y_prev, grad
        theta_sum += it
        bar += (it / theta_sum) * (x - bar)
        x_prev = x
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(grad))):
            raise DivergenceError(f"non-finite GEM-RUOT iterate at iteration {it}")

        h_val, _ = relaxed_dual_ha(problem, eta, bar)
        value = q - h_val
        X = np.maximum(0.0, bar[:n, None] + bar[None, n:] - problem.C) / (2.0 * eta)
        gap = reg_objective(problem, eta, X) - value
        gaps.append(gap)
        if config.record_trace:
            trace.append(_trace_row(problem, eta, it, X, gap))
        if gap <= gap_tol:
            stop = StopReason.GAP_TOL
            break

    h_val, _ = relaxed_dual_ha(problem, eta, bar)
    value = q - h_val
    X = np.maximum(0.0, bar[:n, None] + bar[None, n:] - problem.C) / (2.0 * eta)
    report = SolveReport(
        iterations=it,
        final_objective=uot_objective(problem, X),
        final_reg_objective=reg_objective(problem, eta, X),
        duality_gap_trace=gaps,
        marginal_gap=marginal_gap(X, problem.a, problem.b),
        wall_time=time.perf_counter() - start,
        stop_reason=stop,
        solver="gem-ruot",
        tau=problem.tau,
        eta=eta,
        budget=budget,
        trace=trace,
        dual_point=ReducedDualPoint(bar[:n], bar[n:]),
    )
    return value, TransportPlan(X), report


def _lse_rows(M):
    m = M.max(axis=1)
    return m + np.log(np.exp(M - m[:, None]).sum(axis=1))


def sinkhorn_u_update(problem, eta, v):
    """Exact minimizer of the entropic dual over ``u`` for fixed ``v``."""
    tau = problem.tau
    scale = eta * tau / (eta + tau)
    return scale * (np.log(problem.a.weights) - _lse_rows((np.asarray(v)[None, :] - problem.C) / eta))


def sinkhorn_v_update(problem, eta, u):
    """Exact minimizer of the entropic dual over ``v`` for fixed ``u``."""
    tau = problem.tau
    scale = eta * tau / (eta + tau)
    return scale * (np.log(problem.b.weights) - _lse_rows((np.asarray(u)[:, None] - problem.C).T / eta))


# potentials drift from the absorbed reference by at most this many multiples
# of eta before the kernel is rebuilt
_ABSORB_LIMIT = 30.0


@numba.njit(cache=True)
def _absorb(C, u, v, eta, K):
    n = C.shape[0]
    for i in range(n):
        for j in range(n):
            K[i, j] = math.exp((u[i] + v[j] - C[i, j]) / eta)


@numba.njit(cache=True)
def _sinkhorn_kernel(C, a, b, tau, eta, u, v, max_iters, tol, target, use_target, record,
                     check_every):
    n = C.shape[0]
    scale = eta * tau / (eta + tau)
    K = np.empty((n, n))
    uh = u.copy()
    vh = v.copy()
    _absorb(C, uh, vh, eta, K)
    ea = np.empty(n)
    eb = np.empty(n)
    r = np.empty(n)
    c = np.empty(n)
    m = max_iters if record else 1
    dec_tr = np.full(m, np.nan)
    f_tr = np.full(m, np.nan)
    mg_tr = np.full(m, np.nan)
    # initial dual value
    mass = 0.0
    for i in range(n):
        for j in range(n):
            mass += math.exp((u[i] + v[j] - C[i, j]) / eta)
    prev = eta * mass
    for i in range(n):
        prev += tau * a[i] * math.exp(-u[i] / tau) + tau * b[i] * math.exp(-v[i] / tau)
    it = 0
    last_dec = np.inf
    stopped = False
    diverged = False
    for it in range(1, max_iters + 1):
        for j in range(n):
            eb[j] = math.exp((v[j] - vh[j]) / eta)
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += K[i, j] * eb[j]
            if s > 0.0 and s < np.inf:
                lse = math.log(s) - uh[i] / eta
            else:
                mx = -np.inf
                for j in range(n):
                    mx = max(mx, (v[j] - C[i, j]) / eta)
                acc = 0.0
                for j in range(n):
                    acc += math.exp((v[j] - C[i, j]) / eta - mx)
                lse = mx + math.log(acc)
            u[i] = scale * (math.log(a[i]) - lse)
        for i in range(n):
            ea[i] = math.exp((u[i] - uh[i]) / eta)
        for j in range(n):
            s = 0.0
            for i in range(n):
                s += K[i, j] * ea[i]
            if s > 0.0 and s < np.inf:
                lse = math.log(s) - vh[j] / eta
            else:
                mx = -np.inf
                for i in range(n):
                    mx = max(mx, (u[i] - C[i, j]) / eta)
                acc = 0.0
                for i in range(n):
                    acc += math.exp((u[i] - C[i, j]) / eta - mx)
                lse = mx + math.log(acc)
            v[j] = scale * (math.log(b[j]) - lse)
        drift = 0.0
        for i in range(n):
            drift = max(drift, abs(u[i] - uh[i]) / eta, abs(v[i] - vh[i]) / eta)
        if drift > _ABSORB_LIMIT:
            uh[:] = u
            vh[:] = v
            _absorb(C, uh, vh, eta, K)
        if use_target and not record and it % check_every != 0:
            continue
        for i in range(n):
            ea[i] = math.exp((u[i] - uh[i]) / eta)
            eb[i] = math.exp((v[i] - vh[i]) / eta)
            r[i] = 0.0
            c[i] = 0.0
        cx = 0.0
        for i in range(n):
            for j in range(n):
                x = ea[i] * K[i, j] * eb[j]
                r[i] += x
                c[j] += x
                cx += C[i, j] * x
        mass = 0.0
        cur = 0.0
        for i in range(n):
            mass += r[i]
            cur += tau * a[i] * math.exp(-u[i] / tau) + tau * b[i] * math.exp(-v[i] / tau)
        cur += eta * mass
        if not (cur < np.inf and cur > -np.inf):
            diverged = True
            break
        dec = prev - cur
        last_dec = dec
        f = cx
        mg = 0.0
        if record or use_target:
            for i in range(n):
                f += tau * _kl_term(r[i], a[i]) + tau * _kl_term(c[i], b[i])
                mg += abs(r[i] - a[i]) + abs(c[i] - b[i])
        if record:
            dec_tr[it - 1] = dec
            f_tr[it - 1] = f
            mg_tr[it - 1] = mg
        prev = cur
        if use_target:
            if f <= target:
                stopped = True
                break
        elif dec < tol:
            stopped = True
            break
    return it, stopped, diverged, last_dec, dec_tr, f_tr, mg_tr


@numba.njit(cache=True)
def _kl_term(x, y):
    if x > 0.0:
        return x * (math.log(x) - math.log(y)) - x + y
    return y


def sinkhorn_uot(problem, eta, epsilon=1e-6, max_iters=100_000, record_trace=False,
                 target=None, check_every=16):
    """Entropic UOT by exact alternating minimization of the entropic dual.

    Each half step sets ``u_i = eta tau / (eta + tau) * (log a_i - LSE_j((v_j - C_ij) / eta))``
    (then the symmetric update for ``v``), which zeroes the corresponding
    block of the dual gradient. Potentials stay in log space; the kernel
    ``exp((u_i + v_j - C_ij) / eta)`` is rebuilt around the current
    potentials whenever they drift by more than ``30 eta`` so that each
    iteration needs only matrix-vector products.

    Stops when one full iteration decreases the dual by less than
    ``epsilon`` or, when ``target`` is given, as soon as the primal
    objective of the current plan is ``<= target``. In target mode the
    primal objective is evaluated every ``check_every`` iterations (every
    iteration when a trace is recorded), so the reported count may exceed
    the first qualifying iteration by less than ``check_every``.
    """
    if not eta > 0:
        raise ValidationError("eta must be positive")
    if int(check_every) < 1:
        raise ValidationError("check_every must be >= 1")
    if int(max_iters) < 1:
        raise ValidationError("max_iters must be >= 1")
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    start = time.perf_counter()
    tau = problem.tau
    C = np.ascontiguousarray(problem.C)
    u = np.zeros(problem.n)
    v = np.zeros(problem.n)
    use_target = target is not None
    it, stopped, diverged, last_dec, dec_tr, f_tr, mg_tr = _sinkhorn_kernel(
        C, problem.a.weights, problem.b.weights, tau, float(eta), u, v, int(max_iters),
        float(epsilon), float(target) if use_target else 0.0, use_target, bool(record_trace),
        int(check_every),
    )
    if diverged or not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise DivergenceError(f"non-finite Sinkhorn iterate at iteration {it}")
    X = np.exp((u[:, None] + v[None, :] - C) / eta)
    trace = []
    if record_trace:
        gaps = [float(d) for d in dec_tr[:it]]
        trace = [
            {"iter": k + 1, "f": float(f_tr[k]), "g_eta": float("nan"),
             "dual_gap": float(dec_tr[k]), "marginal_gap": float(mg_tr[k])}
            for k in range(it)
        ]
    else:
        gaps = [float(last_dec)]
    report = SolveReport(
        iterations=int(it),
        final_objective=uot_objective(problem, X),
        final_reg_objective=float("nan"),
        duality_gap_trace=gaps,
        marginal_gap=marginal_gap(X, problem.a, problem.b),
        wall_time=time.perf_counter() - start,
        stop_reason=StopReason.GAP_TOL if stopped else StopReason.MAX_ITERS,
        solver="sinkhorn",
        tau=tau,
        eta=float(eta),
        trace=trace,
        dual_point=ReducedDualPoint(u, v),
    )
    return TransportPlan(X), report
