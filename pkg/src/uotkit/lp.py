"""Dense transportation simplex with a complementary-slackness certificate.

Basic solutions are spanning trees of the bipartite row/column graph. The
start is the northwest-corner rule; entering cells are chosen by the most
negative reduced cost (Dantzig) and, after ``10 m n`` pivots, by the
smallest-index rule (Bland) which cannot cycle.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .exceptions import UOTError, ValidationError

__all__ = ["LpSolution", "transportation_simplex", "vertex_enumeration"]


@dataclass
class LpSolution:
    value: float
    plan: np.ndarray
    u: np.ndarray
    v: np.ndarray
    pivots: int
    certified: bool
    max_dual_violation: float
    duality_gap: float


def _northwest_corner(a, b):
    m, n = a.size, b.size
    X = np.zeros((m, n))
    basis = []
    ra, rb = a.copy(), b.copy()
    i = j = 0
    while i < m and j < n:
        q = min(ra[i], rb[j])
        X[i, j] = q
        basis.append((i, j))
        ra[i] -= q
        rb[j] -= q
        # advance exactly one index so the basis has m + n - 1 cells
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    return X, basis


def _potentials(C, basis, m, n):
    adj_r = [[] for _ in range(m)]
    adj_c = [[] for _ in range(n)]
    for (i, j) in basis:
        adj_r[i].append(j)
        adj_c[j].append(i)
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    stack = [("r", 0)]
    while stack:
        kind, k = stack.pop()
        if kind == "r":
            for j in adj_r[k]:
                if np.isnan(v[j]):
                    v[j] = C[k, j] - u[k]
                    stack.append(("c", j))
        else:
            for i in adj_c[k]:
                if np.isnan(u[i]):
                    u[i] = C[i, k] - v[k]
                    stack.append(("r", i))
    return u, v


def _tree_path(basis, m, n, src_row, dst_col):
    """Alternating path of basic cells from row ``src_row`` to column ``dst_col``."""
    adj = {}
    for (i, j) in basis:
        adj.setdefault(("r", i), []).append(("c", j))
        adj.setdefault(("c", j), []).append(("r", i))
    start, goal = ("r", src_row), ("c", dst_col)
    parent = {start: None}
    stack = [start]
    while stack:
        node = stack.pop()
        if node == goal:
            break
        for nb in adj.get(node, []):
            if nb not in parent:
                parent[nb] = node
                stack.append(nb)
    if goal not in parent:
        raise UOTError("basis is not a spanning tree")
    nodes = [goal]
    while parent[nodes[-1]] is not None:
        nodes.append(parent[nodes[-1]])
    nodes.reverse()
    cells = []
    for p, q in zip(nodes[:-1], nodes[1:]):
        cells.append((p[1], q[1]) if p[0] == "r" else (q[1], p[1]))
    return cells


def transportation_simplex(C, a, b, tol=1e-12, max_pivots=None):
    """Solve ``min <C, X>`` over nonnegative ``X`` with row sums ``a`` and column sums ``b``.

    Parameters
    ----------
    C : array_like, shape (m, n)
    a, b : array_like
        Nonnegative marginals with equal totals (relative tolerance 1e-12).
    tol : float
        Reduced costs above ``-tol * max(1, max|C|)`` count as nonnegative.
    max_pivots : int, optional
        Hard cap on pivots; exceeding it raises :class:`UOTError`.

    Returns
    -------
    LpSolution
        ``certified`` is true when the plan is primal feasible, all reduced
        costs are nonnegative within tolerance, flow only sits on cells with
        zero reduced cost, and the primal and dual values agree.
    """
    C = np.asarray(C, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = C.shape
    if a.shape != (m,) or b.shape != (n,):
        raise ValidationError("marginal lengths must match the cost matrix")
    if np.any(a < 0) or np.any(b < 0):
        raise ValidationError("marginals must be nonnegative")
    if abs(a.sum() - b.sum()) > 1e-12 * max(a.sum(), b.sum(), 1e-300):
        raise ValidationError("marginals must have equal totals")
    scale = max(1.0, float(np.abs(C).max()))
    thresh = -tol * scale
    if max_pivots is None:
        max_pivots = 10 * m * n + 100 * m * n * (m + n)
    bland_after = 10 * m * n

    X, basis = _northwest_corner(a, b)
    pivots = 0
    while True:
        u, v = _potentials(C, basis, m, n)
        red = C - u[:, None] - v[None, :]
        for (i, j) in basis:
            red[i, j] = 0.0
        if red.min() >= thresh:
            break
        if pivots >= max_pivots:
            raise UOTError(f"transportation simplex exceeded {max_pivots} pivots")
        if pivots < bland_after:
            flat = int(np.argmin(red))
        else:
            flat = int(np.flatnonzero(red.ravel() < thresh)[0])
        ei, ej = divmod(flat, n)
        path = _tree_path(basis, m, n, ei, ej)
        # cycle: entering (+), then path cells alternate (-, +, -, ...)
        minus = path[0::2]
        plus = path[1::2]
        theta = min(X[c] for c in minus)
        leaving = min((c for c in minus if X[c] == theta), key=lambda c: (c[0], c[1]))
        for c in minus:
            X[c] -= theta
        for c in plus:
            X[c] += theta
        X[ei, ej] += theta
        X[leaving] = 0.0
        basis.remove(leaving)
        basis.append((ei, ej))
        pivots += 1

    X = np.maximum(X, 0.0)
    value = float(np.sum(C * X))
    dual_value = float(a @ u + b @ v)
    dual_violation = float(max(0.0, -red.min()))
    slack = float(np.max(np.abs(red[X > 0]), initial=0.0))
    primal_ok = (
        np.abs(X.sum(axis=1) - a).sum() + np.abs(X.sum(axis=0) - b).sum()
        <= 1e-9 * max(1.0, a.sum())
    )
    gap = abs(value - dual_value)
    certified = bool(
        primal_ok and dual_violation <= tol * scale and slack <= tol * scale
        and gap <= 1e-9 * max(1.0, abs(value))
    )
    return LpSolution(value, X, u, v, pivots, certified, dual_violation, gap)


def vertex_enumeration(C, a, b):
    """Brute-force optimum over all basic feasible solutions (tiny problems only).

    Every subset of ``m + n - 1`` cells whose equality system has full rank
    is a candidate basis; the minimum cost over nonnegative basic solutions
    is returned together with its plan.
    """
    C = np.asarray(C, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = C.shape
    if m * n > 16:
        raise ValidationError("vertex enumeration is limited to m * n <= 16")
    cells = [(i, j) for i in range(m) for j in range(n)]
    rhs = np.concatenate([a, b])
    best, best_plan = np.inf, None
    for subset in itertools.combinations(cells, m + n - 1):
        A = np.zeros((m + n, m + n - 1))
        for k, (i, j) in enumerate(subset):
            A[i, k] = 1.0
            A[m + j, k] = 1.0
        if np.linalg.matrix_rank(A) < m + n - 1:
            continue
        x, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        if np.any(x < -1e-12) or np.abs(A @ x - rhs).max() > 1e-10:
            continue
        X = np.zeros((m, n))
        for k, (i, j) in enumerate(subset):
            X[i, j] = max(x[k], 0.0)
        val = float(np.sum(C * X))
        if val < best:
            best, best_plan = val, X
    return best, best_plan
