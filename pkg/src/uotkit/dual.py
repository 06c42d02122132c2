"""Dual objectives of the squared-l2 UOT problem and their certificates.

Flat layout for a full dual point is ``[u | v | t.ravel()]`` (t row-major),
length ``n**2 + 2n``. Reduced points are ``[u | v]``, length ``2n``.

Notation: ``h_eta = f_eta + w_eta`` is the constrained dual over
``{t >= 0, t >= u_i + v_j - C_ij}``; ``h_a`` is the unconstrained relaxed dual
with the hinge eliminated; ``h`` is the entropic dual used by Sinkhorn.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import TransportPlan, as_matrix, derived_constants, reg_objective
from .exceptions import DivergenceError, ResidualError, ValidationError

__all__ = [
    "DualPoint",
    "ReducedDualPoint",
    "BoxV",
    "make_box",
    "dual_objective_heta",
    "relaxed_dual_ha",
    "relaxed_dual_value",
    "entropic_dual_h",
    "recover_plan",
    "lagrange_dual_value",
    "duality_gap",
    "optimality_residual",
]


@dataclass(frozen=True, eq=False)
class DualPoint:
    """Stacked dual variables ``(u, v, t)`` of the constrained dual."""

    u: np.ndarray
    v: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64)
        v = np.array(self.v, dtype=np.float64)
        t = np.array(self.t, dtype=np.float64)
        n = u.size
        if u.ndim != 1 or v.shape != (n,) or t.shape != (n, n):
            raise ValidationError(f"inconsistent dual shapes u{u.shape} v{v.shape} t{t.shape}")
        for arr in (u, v, t):
            arr.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "t", t)

    @property
    def n(self):
        return self.u.size

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), np.zeros((n, n)))

    @classmethod
    def from_flat(cls, x, n):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (n * n + 2 * n,):
            raise ValidationError(f"flat dual point must have length {n * n + 2 * n}")
        return cls(x[:n], x[n:2 * n], x[2 * n:].reshape(n, n))

    def flat(self):
        return np.concatenate([self.u, self.v, self.t.ravel()])

    def reduced(self):
        return ReducedDualPoint(self.u, self.v)

    def lifted(self, C):
        """Smallest feasible ``t' >= t`` for cost ``C``."""
        C = as_matrix(C)
        t = np.maximum(self.t, np.maximum(0.0, self.u[:, None] + self.v[None, :] - C))
        return DualPoint(self.u, self.v, t)

    def is_feasible(self, C, tol=0.0):
        C = as_matrix(C)
        s = self.u[:, None] + self.v[None, :] - C
        return bool(np.all(self.t >= -tol) and np.all(self.t >= s - tol))

    def to_json(self):
        return json.dumps({"u": self.u.tolist(), "v": self.v.tolist(), "t": self.t.tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["u"], d["v"], d["t"])


@dataclass(frozen=True, eq=False)
class ReducedDualPoint:
    """Dual potentials ``(u, v)`` of the relaxed dual."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64)
        v = np.array(self.v, dtype=np.float64)
        if u.ndim != 1 or v.shape != u.shape:
            raise ValidationError(f"inconsistent dual shapes u{u.shape} v{v.shape}")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def n(self):
        return self.u.size

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def from_flat(cls, x, n):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (2 * n,):
            raise ValidationError(f"flat reduced point must have length {2 * n}")
        return cls(x[:n], x[n:])

    def flat(self):
        return np.concatenate([self.u, self.v])


@dataclass(frozen=True, eq=False)
class BoxV:
    """Coordinate box on ``(u, v)`` that contains the dual optimum."""

    u_lo: np.ndarray
    v_lo: np.ndarray
    upper: float

    @property
    def lower(self):
        return np.concatenate([self.u_lo, self.v_lo])

    def contains(self, u, v, tol=0.0):
        return bool(
            np.all(u >= self.u_lo - tol) and np.all(v >= self.v_lo - tol)
            and np.all(u <= self.upper + tol) and np.all(v <= self.upper + tol)
        )


def make_box(problem, constants):
    """Box ``tau log(2a_i/(alpha+beta)) <= u_i <= D`` (same for ``v`` with ``b``)."""
    q = constants.q
    tau = problem.tau
    return BoxV(
        u_lo=tau * np.log(2.0 * problem.a.weights / q),
        v_lo=tau * np.log(2.0 * problem.b.weights / q),
        upper=constants.D,
    )


def _reduced_uv(x, n):
    if isinstance(x, (ReducedDualPoint, DualPoint)):
        return x.u, x.v
    if isinstance(x, tuple):
        return np.asarray(x[0], dtype=np.float64), np.asarray(x[1], dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2 * n:
        raise ValidationError("dual point too short")
    return x[:n], x[n:2 * n]


def _full_uvt(x, n):
    if isinstance(x, DualPoint):
        return x.u, x.v, x.t
    if isinstance(x, tuple):
        u, v, t = (np.asarray(z, dtype=np.float64) for z in x)
        return u, v, t
    p = DualPoint.from_flat(x, n)
    return p.u, p.v, p.t


def _marginal_terms(problem, u, v):
    """Return ``tau<e^{-u/tau},a> + tau<e^{-v/tau},b>`` and its (u, v) gradient."""
    tau = problem.tau
    eu = problem.a.weights * np.exp(-u / tau)
    ev = problem.b.weights * np.exp(-v / tau)
    return tau * (eu.sum() + ev.sum()), -eu, -ev


def dual_objective_heta(problem, eta, x, constants=None):
    """Evaluate ``h_eta = f_eta + w_eta`` and both analytic gradients.

    ``x`` is a :class:`DualPoint`, a ``(u, v, t)`` tuple or a flat vector.
    Returns ``(value, grad_f, grad_w)`` with flat gradients; the
    t-block of ``grad_f`` is identically zero.
    """
    if constants is None:
        constants = derived_constants(problem, eta)
    n = problem.n
    u, v, t = _full_uvt(x, n)
    c = constants.split
    marg, gu, gv = _marginal_terms(problem, u, v)
    sq_uv = float(u @ u + v @ v)
    f_val = marg - 0.5 * c * sq_uv
    w_val = 0.5 * c * sq_uv + float(np.sum(t * t)) / (4.0 * eta)
    grad_f = np.concatenate([gu - c * u, gv - c * v, np.zeros(n * n)])
    grad_w = np.concatenate([c * u, c * v, t.ravel() / (2.0 * eta)])
    return f_val + w_val, grad_f, grad_w


def relaxed_dual_ha(problem, eta, x):
    """Relaxed dual ``h_a`` and its gradient (flat ``[du | dv]``).

    At an exact hinge kink ``u_i + v_j = C_ij`` the hinge contributes zero.
    """
    n = problem.n
    u, v = _reduced_uv(x, n)
    hinge = np.maximum(0.0, u[:, None] + v[None, :] - problem.C)
    marg, gu, gv = _marginal_terms(problem, u, v)
    value = marg + float(np.sum(hinge * hinge)) / (4.0 * eta)
    grad = np.concatenate([gu + hinge.sum(axis=1) / (2.0 * eta), gv + hinge.sum(axis=0) / (2.0 * eta)])
    return value, grad


def relaxed_dual_value(problem, eta, x):
    """Dual objective ``F_a = tau (alpha + beta) - h_a``; a lower bound on the regularized optimum."""
    value, _ = relaxed_dual_ha(problem, eta, x)
    return problem.tau * (problem.a.total + problem.b.total) - value


def entropic_dual_h(problem, eta, x):
    """Entropic dual ``eta sum exp((u_i+v_j-C_ij)/eta) + marginal terms`` and its gradient.

    The exponential sum is shifted by its maximum exponent; a
    :class:`DivergenceError` is raised when the shifted result still overflows.
    """
    if not eta > 0:
        raise ValidationError("eta must be positive")
    n = problem.n
    u, v = _reduced_uv(x, n)
    S = (u[:, None] + v[None, :] - problem.C) / eta
    smax = float(S.max())
    if not math.isfinite(smax) or smax > 700.0:
        raise DivergenceError(f"entropic dual overflow (max exponent {smax:g})")
    E = np.exp(S - smax)
    scale = math.exp(smax)
    marg, gu, gv = _marginal_terms(problem, u, v)
    value = eta * scale * float(E.sum()) + marg
    grad = np.concatenate([gu + scale * E.sum(axis=1), gv + scale * E.sum(axis=0)])
    if not (math.isfinite(value) and np.all(np.isfinite(grad))):
        raise DivergenceError("entropic dual evaluation is not finite")
    return value, grad


def recover_plan(problem, eta, x):
    """Primal plan ``X_ij = max(0, u_i + v_j - C_ij) / (2 eta)``."""
    if not eta > 0:
        raise ValidationError("eta must be positive")
    u, v = _reduced_uv(x, problem.n)
    return TransportPlan(np.maximum(0.0, u[:, None] + v[None, :] - problem.C) / (2.0 * eta))


def lagrange_dual_value(problem, eta, x):
    """Concave dual value ``-sum t^2/(4 eta) - marginal terms + tau (alpha + beta)`` after lifting t.

    The constant comes from the convex conjugate of ``tau KL(. | a)``,
    ``tau sum a_i (exp(s_i / tau) - 1)``.
    """
    if isinstance(x, DualPoint):
        p = x
    else:
        u, v, t = _full_uvt(x, problem.n)
        p = DualPoint(u, v, t)
    p = p.lifted(problem.C)
    marg, _, _ = _marginal_terms(problem, p.u, p.v)
    return -float(np.sum(p.t * p.t)) / (4.0 * eta) - marg + problem.tau * (problem.a.total + problem.b.total)


def duality_gap(problem, eta, X, x):
    """Gap ``g_eta(X) - dual(x)`` between a primal plan and a (lifted) dual point.

    Nonnegative up to rounding for any plan and dual point; zero at the
    optimal pair.
    """
    return reg_objective(problem, eta, X) - lagrange_dual_value(problem, eta, x)


def optimality_residual(problem, eta, x):
    """Max violation of ``-u_i/tau + log a_i = log(row sum_i of X)`` and the column analogue.

    ``X`` is the plan recovered from ``x``; every row and column sum must be
    positive or :class:`ResidualError` is raised.
    """
    u, v = _reduced_uv(x, problem.n)
    X = recover_plan(problem, eta, (u, v)).entries
    rows, cols = X.sum(axis=1), X.sum(axis=0)
    if np.any(rows <= 0) or np.any(cols <= 0):
        raise ResidualError("recovered plan has an empty row or column; residual undefined")
    tau = problem.tau
    ru = np.abs(-u / tau + np.log(problem.a.weights) - np.log(rows))
    rv = np.abs(-v / tau + np.log(problem.b.weights) - np.log(cols))
    return float(max(ru.max(), rv.max()))
