"""Principal eigenvalues of drift-diffusion operators and their diffusion limits."""

from .asymptotics import critical_points, fit_rate, limit_large_D, limit_small_D, sweep
from .eigen import EigenError, EigenResult, rayleigh_quotient, solve
from .expr import differentiate, evaluate, parse, to_source
from .model import (BoundaryCondition, Field, Grid1D, Grid2D, Potential, ProblemSpec,
                    graded_grid, make_problem)
from .stream import StreamSpec, classify_persistence, simulate, small_D_limits, steady_state

__all__ = [
    "BoundaryCondition", "EigenError", "EigenResult", "Field", "Grid1D", "Grid2D", "Potential",
    "ProblemSpec", "StreamSpec", "classify_persistence", "critical_points", "differentiate",
    "evaluate", "fit_rate", "graded_grid", "limit_large_D", "limit_small_D", "make_problem",
    "parse", "rayleigh_quotient", "simulate", "small_D_limits", "solve", "steady_state", "sweep",
    "to_source",
]
