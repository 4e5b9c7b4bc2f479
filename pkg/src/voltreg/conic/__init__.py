"""Conic programs in standard form, a splitting solver, and derivatives of the solution map."""

from .cones import ConeSpec, DimensionError, dproject_cone, in_cone, project_cone
from .diff import ParamGradients, vjp_solution_map
from .embedding import DegenerateEmbeddingError, IllConditionedDerivativeError, build_Q
from .problem import ConicProblem, ConicSolution, SolverSettings, Status
from .solver import solve, solve_batch

__all__ = [
    "ConeSpec", "DimensionError", "dproject_cone", "in_cone", "project_cone",
    "ParamGradients", "vjp_solution_map",
    "DegenerateEmbeddingError", "IllConditionedDerivativeError", "build_Q",
    "ConicProblem", "ConicSolution", "SolverSettings", "Status",
    "solve", "solve_batch",
]
