"""Seeded synthetic instance generation."""

from dataclasses import dataclass

import numpy as np

from .core import UotProblem
from .exceptions import ValidationError

__all__ = ["ExperimentConfig", "generate_synthetic", "random_simplex_problem"]


@dataclass(frozen=True)
class ExperimentConfig:
    """Recipe for a synthetic UOT instance.

    ``a`` is drawn uniformly from ``[a_low, a_high]`` and rescaled to total
    ``alpha``; ``b`` is normal with mean 1 and standard deviation ``b_sigma``,
    clipped below at ``b_floor`` and rescaled to total ``beta``; ``C`` is
    uniform in ``[c_low, c_high]``.
    """

    seed: int = 0
    n: int = 200
    alpha: float = 4.0
    beta: float = 5.0
    tau: float = 55.0
    a_low: float = 1.0
    a_high: float = 2.0
    b_sigma: float = 0.1
    b_floor: float = 1e-3
    c_low: float = 0.1
    c_high: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("n must be >= 1")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValidationError("requested totals alpha and beta must be positive")
        if not (0 < self.a_low <= self.a_high):
            raise ValidationError("need 0 < a_low <= a_high")
        if not (self.b_sigma >= 0 and self.b_floor > 0):
            raise ValidationError("need b_sigma >= 0 and b_floor > 0")
        if not (0 <= self.c_low <= self.c_high):
            raise ValidationError("need 0 <= c_low <= c_high")
        if not self.tau > 0:
            raise ValidationError("tau must be positive")


def generate_synthetic(config):
    """Draw a reproducible instance; the same config always yields identical arrays."""
    rng = np.random.default_rng(config.seed)
    n = config.n
    a = rng.uniform(config.a_low, config.a_high, n)
    a *= config.alpha / a.sum()
    b = np.maximum(rng.normal(1.0, config.b_sigma, n), config.b_floor)
    b *= config.beta / b.sum()
    C = rng.uniform(config.c_low, config.c_high, (n, n))
    return UotProblem(C, a, b, config.tau)


def random_simplex_problem(n, tau, seed, c_low=0.5, c_high=1.0, spread=(1.0, 2.0)):
    """Instance with ``a, b`` on the probability simplex and ``C`` uniform in ``[c_low, c_high]``."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(*spread, n)
    b = rng.uniform(*spread, n)
    a /= a.sum()
    b /= b.sum()
    C = rng.uniform(c_low, c_high, (n, n))
    return UotProblem(C, a, b, tau)
