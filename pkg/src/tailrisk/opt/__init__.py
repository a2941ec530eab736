"""Embedded LP/MILP kernel: bounded primal/dual simplex and best-first branch-and-bound."""

from .model import EQ, GE, LE, LinearProgram, MixedIntegerProgram, ModelError, Solution, Status
from .pwl import add_pwl_convex, evaluate_pwl, quadratic_tangents
from .solve import solve_lp, solve_milp

__all__ = [
    "EQ", "GE", "LE", "LinearProgram", "MixedIntegerProgram", "ModelError", "Solution",
    "Status", "add_pwl_convex", "evaluate_pwl", "quadratic_tangents", "solve_lp", "solve_milp",
]
