import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uotkit.core import (
    CostMatrix,
    Measure,
    TransportPlan,
    UotProblem,
    derived_constants,
    entropic_objective,
    kl_divergence,
    marginal_gap,
    reg_objective,
    sparsity_ratio,
    uot_objective,
)
from uotkit.exceptions import ValidationError


def straight_line_f(C, a, b, tau, X):
    """Loop-based re-evaluation of the UOT objective."""
    n = len(a)
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += C[i][j] * X[i][j]
    for marg, ref in ((X.sum(axis=1), a), (X.sum(axis=0), b)):
        for x, y in zip(marg, ref):
            total += tau * ((x * math.log(x / y) if x > 0 else 0.0) - x + y)
    return total


class TestMeasureAndTypes:
    def test_measure_caches_total_and_min(self):
        m = Measure([0.25, 0.5, 0.125])
        assert m.total == pytest.approx(0.875, rel=1e-12)
        assert m.min_entry == 0.125

    @pytest.mark.parametrize("w", [[0.5, 0.0], [1.0, -1.0], [np.nan, 1.0], []])
    def test_measure_rejects_bad_weights(self, w):
        with pytest.raises(ValidationError):
            Measure(w)

    def test_measure_is_immutable(self):
        m = Measure([1.0, 2.0])
        with pytest.raises(ValueError):
            m.weights[0] = 5.0

    def test_input_array_copied(self):
        w = np.array([1.0, 2.0])
        m = Measure(w)
        w[0] = 7.0
        assert m.weights[0] == 1.0

    def test_cost_matrix_checks(self):
        assert CostMatrix([[0.0, -0.0], [2.5, 1.0]]).max_abs == 2.5
        with pytest.raises(ValidationError):
            CostMatrix([[0.0, 1.0]])
        with pytest.raises(ValidationError):
            CostMatrix([[0.0, np.inf], [1.0, 0.0]])

    def test_problem_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            UotProblem(np.zeros((2, 2)), [1.0, 1.0, 1.0], [1.0, 1.0], 1.0)

    @pytest.mark.parametrize("tau", [0.0, -1.0, np.inf])
    def test_problem_rejects_bad_tau(self, tau):
        with pytest.raises(ValidationError):
            UotProblem(np.zeros((1, 1)), [1.0], [1.0], tau)

    def test_small_tau_warns_but_builds(self):
        with pytest.warns(RuntimeWarning):
            p = UotProblem([[0.0, 1.0], [1.0, 0.0]], [0.5, 0.5], [0.5, 0.5], 1e-3)
        assert p.tau == 1e-3

    def test_plan_rejects_negative(self):
        with pytest.raises(ValidationError):
            TransportPlan([[0.1, -0.1], [0.0, 0.0]])


class TestKL:
    def test_identical_vectors(self):
        assert kl_divergence([1.0, 1.0], [1.0, 1.0]) == 0.0

    def test_scalar_example(self):
        assert kl_divergence([1.0], [2.0]) == pytest.approx(1.0 - math.log(2.0), abs=1e-15)

    def test_zero_log_zero(self):
        assert kl_divergence([0.0, 0.5], [0.25, 0.5]) == pytest.approx(0.25, abs=1e-15)

    def test_subnormal_entry(self):
        # x / y underflows to zero here; the log must not
        kl = kl_divergence([5e-324, 0.0], [2.0, 2.0])
        assert kl == pytest.approx(4.0, abs=1e-15)

    def test_errors(self):
        with pytest.raises(ValidationError):
            kl_divergence([1.0], [1.0, 2.0])
        with pytest.raises(ValidationError):
            kl_divergence([1.0], [0.0])

    @settings(max_examples=200, deadline=None)
    @given(
        arrays(np.float64, 5, elements=st.floats(1e-3, 1.0)),
        arrays(np.float64, 5, elements=st.floats(1e-3, 1.0)),
    )
    def test_pinsker_on_simplex(self, x, y):
        x = x / x.sum()
        y = y / y.sum()
        kl = kl_divergence(x, y)
        assert kl >= 0.5 * np.abs(x - y).sum() ** 2 - 1e-12
        assert kl >= -1e-15

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, 4, elements=st.floats(0.0, 3.0)),
           arrays(np.float64, 4, elements=st.floats(1e-3, 3.0)))
    def test_nonnegative_zero_iff_equal(self, x, y):
        kl = kl_divergence(x, y)
        assert kl >= -1e-12
        if np.allclose(x, y, rtol=0, atol=0):
            assert kl == pytest.approx(0.0, abs=1e-12)
        elif np.abs(x - y).max() > 1e-3:
            assert kl > 0


class TestObjectives:
    def test_feasible_plan_has_no_penalty(self, swap2):
        X = np.array([[0.3, 0.2], [0.2, 0.3]])
        assert uot_objective(swap2, X) == pytest.approx(0.4, abs=1e-15)

    def test_zero_plan(self, swap2):
        assert uot_objective(swap2, np.zeros((2, 2))) == pytest.approx(2.0, abs=1e-15)
        assert reg_objective(swap2, 0.3, np.zeros((2, 2))) == pytest.approx(2.0, abs=1e-15)

    def test_duplicate_evaluation(self, make_problem):
        p = make_problem(2, 1.7, 11)
        X = np.random.default_rng(5).uniform(0, 1, (2, 2))
        ref = straight_line_f(p.C, p.a.weights, p.b.weights, p.tau, X)
        assert uot_objective(p, X) == pytest.approx(ref, rel=1e-12, abs=1e-12)

    def test_eta_must_be_positive(self, swap2):
        with pytest.raises(ValidationError):
            reg_objective(swap2, 0.0, np.zeros((2, 2)))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 3), elements=st.floats(0.0, 2.0)), st.floats(1e-6, 10.0))
    def test_reg_minus_penalty_is_f(self, X, eta):
        p = UotProblem(np.arange(9.0).reshape(3, 3), [0.2, 0.3, 0.5], [0.4, 0.4, 0.2], 2.0)
        diff = reg_objective(p, eta, X) - eta * float(np.sum(X * X))
        assert diff == pytest.approx(uot_objective(p, X), rel=1e-12, abs=1e-12)

    def test_entropic_objective_scalar(self):
        p = UotProblem([[0.0]], [1.0], [1.0], 1.0)
        assert entropic_objective(p, 0.37, [[1.0]]) == pytest.approx(-0.37, abs=1e-15)

    def test_entropic_rejects_zero_entry(self, swap2):
        with pytest.raises(ValidationError):
            entropic_objective(swap2, 0.1, [[0.0, 0.1], [0.1, 0.1]])

    def test_entropic_duplicate_evaluation(self, swap2):
        X = np.array([[0.3, 0.1], [0.05, 0.6]])
        eta = 0.2
        H = -sum(x * (math.log(x) - 1.0) for x in X.ravel())
        ref = straight_line_f(swap2.C, swap2.a.weights, swap2.b.weights, 1.0, X) - eta * H
        assert entropic_objective(swap2, eta, X) == pytest.approx(ref, rel=1e-12)


class TestDiagnostics:
    def test_marginal_gap_examples(self):
        assert marginal_gap([[0.2, 0.2], [0.2, 0.2]], [0.5, 0.5], [0.5, 0.5]) == pytest.approx(0.4, abs=1e-15)
        assert marginal_gap([[0.25, 0.25], [0.25, 0.25]], [0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_marginal_gap_shape(self):
        with pytest.raises(ValidationError):
            marginal_gap(np.zeros((2, 2)), [1.0], [1.0])

    def test_sparsity(self):
        assert sparsity_ratio([[0, 1], [1, 0]], 0.0) == 0.5
        assert sparsity_ratio([[0.1, 1], [1, 0.2]], 0.0) == 0.0
        with pytest.raises(ValidationError):
            sparsity_ratio([[1.0]], -1.0)


class TestDerivedConstants:
    def test_two_by_two_values(self, swap2):
        k = derived_constants(swap2, 0.5)
        D = 2.0 + math.log(2.0)
        assert (k.alpha, k.beta, k.kappa, k.R, k.q) == (1.0, 1.0, 2.0, 1.0, 2.0)
        assert k.D == pytest.approx(D, abs=1e-14)
        assert k.mu == pytest.approx(0.5 * math.exp(-D), rel=1e-14)
        assert k.mu == pytest.approx(0.033834, abs=1e-6)
        # (alpha + beta)/(2 tau) + (min mass / tau) e^{-D/tau}
        assert k.L == pytest.approx(1.0 + 0.5 * math.exp(-D), rel=1e-14)
        assert k.mu <= k.L
        assert k.L_a == pytest.approx(2.0 + 2.0 * math.sqrt(2.0) / 0.5, rel=1e-14)
        assert k.L_a == pytest.approx(7.65685, abs=1e-5)
        assert k.p == pytest.approx(0.5 * 0.5 * math.exp(-D), rel=1e-13)
        log_p = math.log(k.p)
        L1 = 1.0 + 2 * 0.5 * 2 + 2 * abs(log_p) + 2 * math.log(2.0) + math.log(2.0) + math.log(2.0)
        assert k.L1 == pytest.approx(L1, rel=1e-14)

    def test_pure_function(self, make_problem):
        p = make_problem(4, 3.0, 2)
        assert derived_constants(p, 0.01) == derived_constants(p, 0.01)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.5, 1e3), st.floats(1e-6, 1.0))
    def test_invariants(self, seed, tau, eta):
        rng = np.random.default_rng(seed)
        n = 3
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            p = UotProblem(rng.uniform(0, 1, (n, n)), rng.uniform(0.1, 1, n), rng.uniform(0.1, 1, n), tau)
        k = derived_constants(p, eta)
        assert math.isfinite(k.D)
        assert 0 < k.mu <= k.L
        assert k.L_a > 0
        assert k.R == pytest.approx(k.q ** 2 / 4)
