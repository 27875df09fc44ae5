"""Collinear periodic n-body orbits with simultaneous binary collisions.

Orbits are found by minimizing a discretized action over ordered collinear
paths with prescribed collision patterns at both ends of a half period, and
checked by integrating the equations of motion through the collisions.
"""

from .action import (
    ActionBreakdown,
    DiscretePath,
    action_evaluate,
    action_gradient,
    el_residual_supnorm,
    graded_mesh,
)
from .core import PhaseState, SystemSpec, validate_spec
from .errors import NBodyError
from .integrator import IntegratorOptions, integrate, periodicity_check
from .minimizer import MinimizerResult, OptimizerOptions, minimize, solve_symmetric
from .verifier import VerificationReport, VerifierOptions, full_report

__version__ = "0.1.0"

__all__ = [
    "ActionBreakdown",
    "DiscretePath",
    "IntegratorOptions",
    "MinimizerResult",
    "NBodyError",
    "OptimizerOptions",
    "PhaseState",
    "SystemSpec",
    "VerificationReport",
    "VerifierOptions",
    "action_evaluate",
    "action_gradient",
    "el_residual_supnorm",
    "full_report",
    "graded_mesh",
    "integrate",
    "minimize",
    "periodicity_check",
    "solve_symmetric",
    "validate_spec",
]
