"""Unbalanced optimal transport with squared-l2 regularization.

The main entry points are :func:`gem_uot` (accelerated solver on the
regularized dual), :func:`gem_ruot`, :func:`sinkhorn_uot` (entropic
baseline), :func:`gem_ot` (balanced OT retrieval) and the oracles in
:mod:`uotkit.oracle`.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CostMatrix,
    DerivedConstants,
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
from .exceptions import DivergenceError, ResidualError, UOTError, ValidationError  # noqa: E402
from .rounding import FeasiblePlan, gem_ot, proj_polytope  # noqa: E402
from .solvers import GemConfig, SolveReport, gem_ruot, gem_uot, sinkhorn_uot  # noqa: E402
