"""Discounted weakly coupled Hamilton-Jacobi systems on the torus: schemes,
critical values, Mather measures and the vanishing-discount limit."""

from .errors import HJSwitchError, NumericalError, ValidationError
from .model import (
    ControlGrid,
    CouplingMatrix,
    HamiltonianSpec,
    ProblemSpec,
    TorusGrid,
    lifted_problem,
    random_problem,
    scalar_problem,
    validate_coupling,
)
from .solver import build_scheme, default_scheme, estimate_critical_value, solve_discounted

__version__ = "0.1.0"

__all__ = [
    "ControlGrid",
    "CouplingMatrix",
    "HJSwitchError",
    "HamiltonianSpec",
    "NumericalError",
    "ProblemSpec",
    "TorusGrid",
    "ValidationError",
    "build_scheme",
    "default_scheme",
    "estimate_critical_value",
    "lifted_problem",
    "random_problem",
    "scalar_problem",
    "solve_discounted",
    "validate_coupling",
]
