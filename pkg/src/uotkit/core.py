"""Problem types, primal objectives and derived constants.

Everything here is a pure function of immutable inputs. Arrays stored on
the problem types are copied at construction and marked read-only.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ValidationError

__all__ = [
    "Measure",
    "CostMatrix",
    "UotProblem",
    "TransportPlan",
    "DerivedConstants",
    "as_matrix",
    "kl_divergence",
    "uot_objective",
    "reg_objective",
    "entropic_objective",
    "marginal_gap",
    "sparsity_ratio",
    "derived_constants",
]


def _frozen_copy(x, ndim):
    arr = np.array(x, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ValidationError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Measure:
    """Strictly positive mass vector with cached total and minimum entry."""

    weights: np.ndarray
    total: float = field(init=False)
    min_entry: float = field(init=False)

    def __post_init__(self):
        w = _frozen_copy(self.weights, 1)
        if w.size == 0:
            raise ValidationError("measure must have at least one entry")
        if not np.all(np.isfinite(w)):
            raise ValidationError("measure entries must be finite")
        if np.any(w <= 0):
            raise ValidationError("measure entries must be strictly positive (a_min > 0)")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "total", float(w.sum()))
        object.__setattr__(self, "min_entry", float(w.min()))

    def __len__(self):
        return self.weights.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Square, finite, nonnegative ground-cost matrix."""

    entries: np.ndarray
    max_abs: float = field(init=False)

    def __post_init__(self):
        c = _frozen_copy(self.entries, 2)
        if c.shape[0] != c.shape[1]:
            raise ValidationError(f"cost matrix must be square, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValidationError("cost matrix entries must be finite")
        if np.any(c < 0):
            raise ValidationError("cost matrix entries must be nonnegative")
        object.__setattr__(self, "entries", c)
        object.__setattr__(self, "max_abs", float(np.abs(c).max()))

    @property
    def n(self):
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def _as_measure(x):
    return x if isinstance(x, Measure) else Measure(x)


def _as_cost(x):
    return x if isinstance(x, CostMatrix) else CostMatrix(x)


@dataclass(frozen=True, eq=False)
class UotProblem:
    """KL-penalized unbalanced OT problem ``min <C,X> + tau KL(X1|a) + tau KL(X'1|b)``.

    Plain arrays are accepted for ``cost``, ``a`` and ``b`` and wrapped.
    A warning is emitted when ``tau < a3_factor * min(1/(alpha+beta), ||C||_inf)``;
    the solvers still run in that regime.
    """

    cost: CostMatrix
    a: Measure
    b: Measure
    tau: float
    a3_factor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "cost", _as_cost(self.cost))
        object.__setattr__(self, "a", _as_measure(self.a))
        object.__setattr__(self, "b", _as_measure(self.b))
        tau = float(self.tau)
        if not (math.isfinite(tau) and tau > 0):
            raise ValidationError(f"tau must be a positive finite real, got {self.tau!r}")
        object.__setattr__(self, "tau", tau)
        n = self.cost.n
        if len(self.a) != n or len(self.b) != n:
            raise ValidationError(
                f"dimension mismatch: C is {n}x{n}, len(a)={len(self.a)}, len(b)={len(self.b)}"
            )
        floor = min(1.0 / (self.a.total + self.b.total), self.cost.max_abs)
        if tau < self.a3_factor * floor:
            warnings.warn(
                f"tau={tau:g} is below the recommended floor {self.a3_factor * floor:g}; "
                "iteration bounds may not apply",
                RuntimeWarning,
                stacklevel=3,
            )

    @property
    def n(self):
        return self.cost.n

    @property
    def C(self):
        return self.cost.entries

    def with_tau(self, tau):
        return UotProblem(self.cost, self.a, self.b, tau, self.a3_factor)


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Nonnegative n x n transport plan."""

    entries: np.ndarray

    def __post_init__(self):
        x = _frozen_copy(self.entries, 2)
        if not np.all(np.isfinite(x)):
            raise ValidationError("plan entries must be finite")
        if np.any(x < 0):
            raise ValidationError("plan entries must be nonnegative")
        object.__setattr__(self, "entries", x)

    @property
    def row_sums(self):
        return self.entries.sum(axis=1)

    @property
    def col_sums(self):
        return self.entries.sum(axis=0)

    @property
    def mass(self):
        return float(self.entries.sum())

    def sparsity(self, threshold=0.0):
        return sparsity_ratio(self.entries, threshold)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def as_matrix(X):
    """Return the dense float array behind a plan or array-like."""
    if isinstance(X, (TransportPlan, CostMatrix)):
        return X.entries
    return np.asarray(X, dtype=np.float64)


def _weights(m):
    return m.weights if isinstance(m, Measure) else np.asarray(m, dtype=np.float64)


def kl_divergence(x, y):
    """Generalized KL divergence ``sum x log(x/y) - x + y`` with ``0 log 0 = 0``.

    Parameters
    ----------
    x : array-like
        Nonnegative vector.
    y : array-like
        Strictly positive vector of the same length.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValidationError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if np.any(y <= 0):
        raise ValidationError("KL reference vector must be strictly positive")
    if np.any(x < 0):
        raise ValidationError("KL first argument must be nonnegative")
    pos = x > 0
    xlogx = np.zeros_like(x)
    # difference of logs: x / y can underflow to 0 for subnormal x
    xlogx[pos] = x[pos] * (np.log(x[pos]) - np.log(y[pos]))
    return float(xlogx.sum() - x.sum() + y.sum())


def _check_plan_shape(problem, X):
    if X.shape != (problem.n, problem.n):
        raise ValidationError(f"plan shape {X.shape} does not match n={problem.n}")


def uot_objective(problem, X):
    """Unregularized UOT objective ``<C,X> + tau KL(X1|a) + tau KL(X'1|b)``."""
    X = as_matrix(X)
    _check_plan_shape(problem, X)
    tau = problem.tau
    return float(
        np.sum(problem.C * X)
        + tau * kl_divergence(X.sum(axis=1), problem.a.weights)
        + tau * kl_divergence(X.sum(axis=0), problem.b.weights)
    )


def _check_eta(eta):
    if not (eta > 0 and math.isfinite(eta)):
        raise ValidationError(f"eta must be a positive finite real, got {eta!r}")


def reg_objective(problem, eta, X):
    """Squared-l2 regularized objective ``f(X) + eta * ||X||_2^2`` (entrywise norm)."""
    _check_eta(eta)
    X = as_matrix(X)
    return uot_objective(problem, X) + eta * float(np.sum(X * X))


def entropic_objective(problem, eta, X):
    """Entropic objective ``<C,X> - eta H(X) + tau KL(X1|a) + tau KL(X'1|b)``.

    ``H(X) = -sum X_ij (log X_ij - 1)``; every entry of ``X`` must be positive.
    """
    _check_eta(eta)
    X = as_matrix(X)
    if np.any(X <= 0):
        raise ValidationError("entropic objective requires a strictly positive plan")
    entropy = -float(np.sum(X * (np.log(X) - 1.0)))
    return uot_objective(problem, X) - eta * entropy


def marginal_gap(X, a, b):
    """l1 distance of the plan's marginals to ``(a, b)``."""
    X = as_matrix(X)
    a = _weights(a)
    b = _weights(b)
    if X.shape != (a.size, b.size):
        raise ValidationError(f"plan shape {X.shape} does not match marginals ({a.size}, {b.size})")
    return float(np.abs(X.sum(axis=1) - a).sum() + np.abs(X.sum(axis=0) - b).sum())


def sparsity_ratio(X, threshold=0.0):
    """Fraction of plan entries with value ``<= threshold``."""
    if threshold < 0:
        raise ValidationError("threshold must be nonnegative")
    X = as_matrix(X)
    return float(np.count_nonzero(X <= threshold)) / X.size


@dataclass(frozen=True)
class DerivedConstants:
    """Scalars that parametrize the dual geometry for a given ``(problem, eta)``.

    ``split`` is the quadratic coefficient ``(min mass / tau) e^{-D/tau}``
    moved from the smooth part of the dual into the strongly convex part.
    """

    n: int
    tau: float
    eta: float
    c_max: float
    alpha: float
    beta: float
    a_min: float
    b_min: float
    kappa: float
    R: float
    p: float
    log_p: float
    q: float
    D: float
    L1: float
    L: float
    mu: float
    L_a: float
    split: float


def derived_constants(problem, eta):
    """Compute the constants of the squared-l2 dual for ``problem`` at ``eta``.

    >>> prob = UotProblem([[0., 1.], [1., 0.]], [.5, .5], [.5, .5], 1.0)
    >>> round(derived_constants(prob, 0.5).D, 5)
    2.69315
    """
    _check_eta(eta)
    tau = problem.tau
    a = problem.a.weights
    b = problem.b.weights
    alpha, beta = problem.a.total, problem.b.total
    a_min, b_min = problem.a.min_entry, problem.b.min_entry
    m = min(a_min, b_min)
    c_max = problem.cost.max_abs
    q = alpha + beta
    D = c_max + eta * q + tau * math.log(q / 2.0) - tau * min(math.log(a_min), math.log(b_min))
    log_p = math.log(0.5 * m) - D / tau
    split = (m / tau) * math.exp(-D / tau)
    L1 = (
        c_max
        + 2.0 * eta * q
        + 2.0 * tau * abs(log_p)
        + 2.0 * tau * abs(math.log(q))
        + tau * float(np.max(np.abs(np.log(a))))
        + tau * float(np.max(np.abs(np.log(b))))
    )
    return DerivedConstants(
        n=problem.n,
        tau=tau,
        eta=float(eta),
        c_max=c_max,
        alpha=alpha,
        beta=beta,
        a_min=a_min,
        b_min=b_min,
        kappa=1.0 / m,
        R=q * q / 4.0,
        p=math.exp(log_p),
        log_p=log_p,
        q=q,
        D=D,
        L1=L1,
        L=q / (2.0 * tau) + split,
        mu=min(split, 1.0 / (2.0 * eta)),
        L_a=q / tau + 2.0 * math.sqrt(problem.n) / eta,
        split=split,
    )
