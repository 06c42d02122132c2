import warnings

import numpy as np
import pytest

from uotkit.core import UotProblem
from uotkit.experiments import random_simplex_problem


@pytest.fixture
def swap2():
    """2x2 instance with uniform halves and swap cost."""
    return UotProblem([[0.0, 1.0], [1.0, 0.0]], [0.5, 0.5], [0.5, 0.5], 1.0)


@pytest.fixture
def skew2():
    """2x2 instance with unequal marginals and swap cost."""
    return UotProblem([[0.0, 1.0], [1.0, 0.0]], [0.7, 0.3], [0.4, 0.6], 1.0)


def random_positive_problem(n, tau, seed, total=(1.0, 1.0)):
    rng = np.random.default_rng(seed)
    a = rng.uniform(1.0, 2.0, n)
    b = rng.uniform(1.0, 2.0, n)
    a *= total[0] / a.sum()
    b *= total[1] / b.sum()
    C = rng.uniform(0.1, 1.0, (n, n))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return UotProblem(C, a, b, tau)


@pytest.fixture
def make_problem():
    return random_positive_problem


@pytest.fixture
def simplex_problem():
    return random_simplex_problem
