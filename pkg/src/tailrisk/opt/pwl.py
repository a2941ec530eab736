"""Convex piecewise-linear epigraphs."""

from __future__ import annotations

import math

import numpy as np

from .model import GE, LinearProgram, ModelError


def add_pwl_convex(lp: LinearProgram, var_index, breakpoints, slopes, values,
                   weight=1.0, lower=-math.inf, name=None) -> int:
    """Add an epigraph variable ``t >= values[i] + slopes[i] * (x - breakpoints[i])``.

    Each ``(breakpoints[i], values[i], slopes[i])`` is one supporting line of a
    convex function of ``x = lp[var_index]``; ``t`` enters the objective with
    coefficient ``weight``.  Returns the index of ``t``.
    """
    breakpoints = np.asarray(breakpoints, dtype=float)
    slopes = np.asarray(slopes, dtype=float)
    values = np.asarray(values, dtype=float)
    if not (len(breakpoints) == len(slopes) == len(values)) or len(slopes) == 0:
        raise ModelError("breakpoints, slopes and values must have equal nonzero length")
    if np.any(np.diff(slopes) < 0):
        raise ModelError("non-convex PWL: slopes must be nondecreasing")
    t = lp.add_variable(lower, math.inf, weight, name)
    for b, s, v in zip(breakpoints, slopes, values):
        if s == 0.0 and v <= lower:
            continue  # implied by the lower bound on t
        # t - s x >= v - s b
        lp.add_row({t: 1.0, var_index: -s}, GE, v - s * b)
    return t


def quadratic_tangents(lo: float, hi: float, segments: int = 8):
    """Tangent lines of ``d**2`` at ``segments + 1`` equally spaced points of [lo, hi].

    The max of these lines is exact at the points and under-estimates the
    parabola by at most ``(width / 2) ** 2`` between them.
    """
    pts = np.linspace(lo, hi, segments + 1)
    return pts, 2.0 * pts, pts**2


def evaluate_pwl(x, breakpoints, slopes, values) -> float:
    b = np.asarray(breakpoints, dtype=float)
    return float(np.max(np.asarray(values) + np.asarray(slopes) * (x - b)))
