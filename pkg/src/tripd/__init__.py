"""Primal-dual proximal splitting with block-coordinate and distributed variants."""

from tripd.core import DimensionError, LinearMap, Metric, PrimalDualPoint, ProblemSpec, SmoothTerm, assemble_metrics
from tripd.solver import DivergenceError, SolverConfig, StepsizeError, solve, tripd_step, verify_stepsizes

__all__ = [
    "DimensionError",
    "DivergenceError",
    "LinearMap",
    "Metric",
    "PrimalDualPoint",
    "ProblemSpec",
    "SmoothTerm",
    "SolverConfig",
    "StepsizeError",
    "assemble_metrics",
    "solve",
    "tripd_step",
    "verify_stepsizes",
]
