"""Finite-difference solver and verification tools for ``Min{L1 v, L2 v} = 0`` in 2D
and the two-phase free boundary problem satisfied by ``u = v22``."""

from .grid import Grid2D, GridError, ScalarField2D, make_grid, sample
from .operators import BellmanProblem, EllipticOperator, SmoothedNonlinearity
from .solver import SolveOutcome, SolverError, solve_policy_iteration, solve_smoothed
from .twophase import FluxLaw, TwoPlaneSolution
from .freeboundary import FreeBoundary, extract_gamma, jump_condition_survey
from .manufactured import ExactSolution, catalog, oracle_check
from .experiment import ConfigError, ExperimentConfig, run

__version__ = "0.1.0"

__all__ = [
    "BellmanProblem",
    "ConfigError",
    "EllipticOperator",
    "ExactSolution",
    "ExperimentConfig",
    "FluxLaw",
    "FreeBoundary",
    "Grid2D",
    "GridError",
    "ScalarField2D",
    "SmoothedNonlinearity",
    "SolveOutcome",
    "SolverError",
    "TwoPlaneSolution",
    "catalog",
    "extract_gamma",
    "jump_condition_survey",
    "make_grid",
    "oracle_check",
    "run",
    "sample",
    "solve_policy_iteration",
    "solve_smoothed",
]
