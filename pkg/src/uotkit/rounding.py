"""Rounding onto the transportation polytope and OT retrieval through UOT."""

import math
from dataclasses import dataclass

import numpy as np

from .core import CostMatrix, Measure, TransportPlan, UotProblem, as_matrix, marginal_gap
from .exceptions import ValidationError
from .solvers import GemConfig, gem_uot

__all__ = ["FeasiblePlan", "GemOtReport", "proj_polytope", "gem_ot"]

_TOTAL_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class FeasiblePlan:
    """Nonnegative plan whose marginals match ``(a, b)``.

    Construction checks ``||X1 - a||_1 + ||X'1 - b||_1 <= 1e-9 (alpha + beta)``.
    """

    entries: np.ndarray
    a: Measure
    b: Measure

    def __post_init__(self):
        a = self.a if isinstance(self.a, Measure) else Measure(self.a)
        b = self.b if isinstance(self.b, Measure) else Measure(self.b)
        x = np.array(self.entries, dtype=np.float64)
        if x.shape != (len(a), len(b)):
            raise ValidationError(f"plan shape {x.shape} does not match marginals")
        if not np.all(np.isfinite(x)) or np.any(x < 0):
            raise ValidationError("feasible plan entries must be finite and nonnegative")
        gap = marginal_gap(x, a, b)
        if gap > 1e-9 * (a.total + b.total):
            raise ValidationError(f"plan is not in the transportation polytope (marginal gap {gap:.3e})")
        x.setflags(write=False)
        object.__setattr__(self, "entries", x)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def as_plan(self):
        return TransportPlan(self.entries)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def _check_equal_totals(a, b):
    if abs(a.total - b.total) > _TOTAL_RTOL * max(a.total, b.total):
        raise ValidationError(
            f"marginals must have equal totals (got {a.total!r} and {b.total!r})"
        )


def proj_polytope(X, a, b):
    """Round a nonnegative matrix into ``Pi(a, b)``.

    Rows are scaled down to at most ``a``, then columns to at most ``b``;
    the remaining deficits ``err_r``, ``err_c`` are filled by the rank-one
    term ``err_r err_c^T / ||err_r||_1``. A zero row (column) sum leaves that
    row (column) unscaled. The result satisfies
    ``||Y - X||_1 <= 2 (||X1 - a||_1 + ||X'1 - b||_1)``.

    Examples
    --------
    >>> proj_polytope([[0.2, 0.2], [0.2, 0.2]], [0.5, 0.5], [0.5, 0.5]).entries.tolist()
    [[0.25, 0.25], [0.25, 0.25]]
    """
    a = a if isinstance(a, Measure) else Measure(a)
    b = b if isinstance(b, Measure) else Measure(b)
    _check_equal_totals(a, b)
    X = np.array(as_matrix(X), dtype=np.float64)
    if X.shape != (len(a), len(b)):
        raise ValidationError(f"plan shape {X.shape} does not match marginals")
    if not np.all(np.isfinite(X)) or np.any(X < 0):
        raise ValidationError("plan entries must be finite and nonnegative")
    aw, bw = a.weights, b.weights

    # scale only rows/columns that exceed their target; others keep factor 1
    rows = X.sum(axis=1)
    row_scale = np.divide(aw, rows, out=np.ones_like(rows), where=rows > aw)
    X1 = row_scale[:, None] * X
    cols = X1.sum(axis=0)
    col_scale = np.divide(bw, cols, out=np.ones_like(cols), where=cols > bw)
    X2 = X1 * col_scale[None, :]

    err_r = aw - X2.sum(axis=1)
    err_c = bw - X2.sum(axis=0)
    # scaling never overshoots, so the errors are nonnegative up to rounding
    err_r = np.maximum(err_r, 0.0)
    err_c = np.maximum(err_c, 0.0)
    norm = err_r.sum()
    Y = X2 if norm == 0.0 else X2 + np.outer(err_r, err_c) / norm
    return FeasiblePlan(Y, a, b)


@dataclass
class GemOtReport:
    ot_gap_bound: float
    tau_used: float
    eta_used: float
    epsilon_uot: float
    objective: float
    stop_reason: str
    iterations: int
    uot_marginal_gap: float

    def to_dict(self):
        return dict(self.__dict__)


def gem_ot(cost, a, b, epsilon, max_iters=200_000):
    """Approximate standard OT by solving a tuned UOT problem and rounding.

    With ``eps' = epsilon / 16``, ``eta = eps' / 2``,
    ``gamma = ||C||_inf + eta`` and ``tau = 16 ||C||_inf n gamma / epsilon``,
    runs :func:`gem_uot` at accuracy ``eps'`` and rounds its plan with
    :func:`proj_polytope`. ``a`` and ``b`` must be probability vectors.

    Returns ``(FeasiblePlan, GemOtReport)``. ``stop_reason`` in the report
    records whether the inner solve ended on the certified gap or on the
    iteration budget.
    """
    cost = cost if isinstance(cost, CostMatrix) else CostMatrix(cost)
    a = a if isinstance(a, Measure) else Measure(a)
    b = b if isinstance(b, Measure) else Measure(b)
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise ValidationError("epsilon must be a positive finite real")
    for name, m in (("a", a), ("b", b)):
        if abs(m.total - 1.0) > _TOTAL_RTOL:
            raise ValidationError(
                f"{name} must lie on the probability simplex (total {m.total!r}); normalize it first"
            )
    n = cost.n
    c_max = cost.max_abs
    eps_uot = epsilon / 16.0
    eta = eps_uot / 2.0
    if c_max == 0.0:
        Y = proj_polytope(np.outer(a.weights, b.weights), a, b)
        return Y, GemOtReport(epsilon, float("nan"), eta, eps_uot, 0.0, "trivial", 0, 0.0)
    gamma = c_max + eta
    tau = 16.0 * c_max * n * gamma / epsilon
    problem = UotProblem(cost, a, b, tau)
    plan, rep = gem_uot(problem, GemConfig(epsilon=eps_uot, eta=eta, max_iters=max_iters))
    Y = proj_polytope(plan.entries, a, b)
    report = GemOtReport(
        ot_gap_bound=epsilon,
        tau_used=tau,
        eta_used=eta,
        epsilon_uot=eps_uot,
        objective=float(np.sum(cost.entries * Y.entries)),
        stop_reason=rep.stop_reason.value,
        iterations=rep.iterations,
        uot_marginal_gap=rep.marginal_gap,
    )
    return Y, report
