"""Problem and solution containers for the embedded LP/MILP kernel."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
import math

import numpy as np
import scipy.sparse as sp

LE, EQ, GE = "<=", "==", ">="
_SENSES = (LE, EQ, GE)


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration-limit"


class ModelError(ValueError):
    pass


@dataclass
class LinearProgram:
    """Minimisation LP built incrementally, one variable or row at a time.

    Rows are stored sparsely as ``(indices, coefficients, sense, rhs)``.
    """

    lower: list[float] = field(default_factory=list)
    upper: list[float] = field(default_factory=list)
    cost: list[float] = field(default_factory=list)
    names: list[str] = field(default_factory=list)
    rows: list[tuple[list[int], list[float], str, float]] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return len(self.lower)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def add_variable(self, lower=0.0, upper=math.inf, cost=0.0, name=None) -> int:
        if lower > upper or lower == math.inf or upper == -math.inf:
            raise ModelError(f"variable {name or len(self.lower)}: invalid bounds [{lower}, {upper}]")
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        self.cost.append(float(cost))
        self.names.append(name if name is not None else f"v{len(self.names)}")
        return len(self.lower) - 1

    def add_row(self, coeffs, sense, rhs) -> int:
        """Add ``sum(coeffs[j] * x[j]) <sense> rhs``; ``coeffs`` maps index -> value."""
        if sense not in _SENSES:
            raise ModelError(f"unknown relation {sense!r}")
        if not math.isfinite(rhs):
            raise ModelError("row rhs must be finite")
        items = coeffs.items() if isinstance(coeffs, dict) else coeffs
        idx, val = [], []
        for j, a in items:
            if not 0 <= j < self.n_vars:
                raise ModelError(f"row references variable {j} out of range")
            if a != 0.0:
                idx.append(int(j))
                val.append(float(a))
        self.rows.append((idx, val, sense, float(rhs)))
        return len(self.rows) - 1

    def add_objective(self, j: int, coef: float) -> None:
        self.cost[j] += coef

    def matrix(self) -> sp.csc_matrix:
        ri, ci, vals = [], [], []
        for i, (idx, val, _, _) in enumerate(self.rows):
            ri.extend([i] * len(idx))
            ci.extend(idx)
            vals.extend(val)
        return sp.csc_matrix((vals, (ri, ci)), shape=(self.n_rows, self.n_vars))

    def arrays(self):
        """Return ``(A, rhs, senses, cost, lower, upper)`` as numpy/scipy arrays."""
        rhs = np.array([r[3] for r in self.rows], dtype=float)
        senses = np.array([_SENSES.index(r[2]) for r in self.rows], dtype=np.int8)
        return (
            self.matrix(),
            rhs,
            senses,
            np.array(self.cost, dtype=float),
            np.array(self.lower, dtype=float),
            np.array(self.upper, dtype=float),
        )

    def max_violation(self, x) -> float:
        """Largest absolute bound or row violation of point ``x``."""
        x = np.asarray(x, dtype=float)
        lo = np.array(self.lower)
        hi = np.array(self.upper)
        worst = float(max(np.max(lo - x, initial=0.0), np.max(x - hi, initial=0.0)))
        for idx, val, sense, rhs in self.rows:
            act = float(np.dot(val, x[idx])) if idx else 0.0
            if sense == LE:
                worst = max(worst, act - rhs)
            elif sense == GE:
                worst = max(worst, rhs - act)
            else:
                worst = max(worst, abs(act - rhs))
        return worst

    def objective(self, x) -> float:
        return float(np.dot(self.cost, x))

    def to_text(self) -> str:
        """Dump in a CPLEX-LP-like text format, for inspection only."""
        def term(a, j):
            return f"{'+' if a >= 0 else '-'} {abs(a):.12g} {self.names[j]}"

        out = ["Minimize", " obj: " + " ".join(term(c, j) for j, c in enumerate(self.cost) if c)]
        out.append("Subject To")
        for i, (idx, val, sense, rhs) in enumerate(self.rows):
            lhs = " ".join(term(a, j) for j, a in zip(idx, val)) or "0"
            out.append(f" r{i}: {lhs} {sense.replace('==', '=')} {rhs:.12g}")
        out.append("Bounds")
        for j in range(self.n_vars):
            lo, hi = self.lower[j], self.upper[j]
            lo_s = "-inf" if lo == -math.inf else f"{lo:.12g}"
            hi_s = "+inf" if hi == math.inf else f"{hi:.12g}"
            out.append(f" {lo_s} <= {self.names[j]} <= {hi_s}")
        extra = getattr(self, "binaries", None)
        if extra:
            out.append("Binary")
            out.append(" " + " ".join(self.names[j] for j in sorted(extra)))
        out.append("End")
        return "\n".join(out) + "\n"


@dataclass
class MixedIntegerProgram(LinearProgram):
    """A :class:`LinearProgram` with a set of variables restricted to {0, 1}."""

    binaries: set[int] = field(default_factory=set)

    def add_binary(self, cost=0.0, name=None, lower=0.0, upper=1.0) -> int:
        if lower < 0.0 or upper > 1.0:
            raise ModelError("binary bounds must lie within [0, 1]")
        j = self.add_variable(lower, upper, cost, name)
        self.binaries.add(j)
        return j

    def relaxation(self) -> LinearProgram:
        return LinearProgram(
            list(self.lower), list(self.upper), list(self.cost), list(self.names), list(self.rows)
        )


@dataclass
class Solution:
    status: Status
    objective: float = math.nan
    x: np.ndarray | None = None
    iterations: int = 0
    nodes: int = 0
    gap: float = math.nan

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL
