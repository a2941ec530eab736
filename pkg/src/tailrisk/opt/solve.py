"""LP and MILP entry points of the embedded kernel."""

from __future__ import annotations

import heapq
import itertools
import math

import numpy as np

from .model import LinearProgram, MixedIntegerProgram, Solution, Status
from .simplex import BoundedSimplex

INT_TOL = 1e-6
NODE_LIMIT = 10**6


def solve_lp(lp: LinearProgram) -> Solution:
    A, b, senses, c, lo, hi = lp.arrays()
    eng = BoundedSimplex(A, b, senses, c)
    eng.set_bounds(lo, hi)
    status = eng.solve_cold()
    if status is not Status.OPTIMAL:
        return Solution(status, iterations=eng.iterations)
    x = eng.x_struct()
    return Solution(status, float(c @ x), x, iterations=eng.iterations, gap=0.0)


def _most_fractional(xb: np.ndarray) -> int | None:
    frac = np.abs(xb - np.round(xb))
    if frac.max(initial=0.0) <= INT_TOL:
        return None
    # distance to 0.5; argmin returns the lowest position on ties
    return int(np.argmin(np.abs(xb - np.floor(xb) - 0.5)))


def solve_milp(mip: MixedIntegerProgram, gap_tol: float = 1e-6, node_limit: int = NODE_LIMIT) -> Solution:
    """Best-first branch-and-bound over the binary variables of ``mip``.

    Nodes are ordered by LP bound (ties by creation order); the branching
    variable is the most fractional binary, ties to the lowest index.  Both
    children are solved eagerly from the parent's basis with the dual simplex.
    """
    A, b, senses, c, lo0, hi0 = mip.arrays()
    bins = np.array(sorted(mip.binaries), dtype=np.int64)
    if bins.size:
        lo0[bins] = np.ceil(lo0[bins] - INT_TOL)
        hi0[bins] = np.floor(hi0[bins] + INT_TOL)
        if np.any(lo0[bins] > hi0[bins]):
            return Solution(Status.INFEASIBLE)
    eng = BoundedSimplex(A, b, senses, c)
    eng.set_bounds(lo0, hi0)
    status = eng.solve_cold()
    iters = eng.iterations
    if status is not Status.OPTIMAL:
        return Solution(status, iterations=iters, nodes=1)

    best_obj, best_x = math.inf, None
    counter = itertools.count()
    heap: list = []
    nodes = 1
    open_bound = math.inf

    def cutoff():
        return best_obj - gap_tol * max(1.0, abs(best_obj)) if best_x is not None else math.inf

    def consider(lo, hi, x, obj):
        """Either record an integral point as incumbent or queue the node."""
        nonlocal best_obj, best_x, iters
        if bins.size == 0 or _most_fractional(x[bins]) is None:
            if bins.size:
                plo, phi = lo.copy(), hi.copy()
                fixed = np.round(x[bins])
                plo[bins] = fixed
                phi[bins] = fixed
                snap = eng.snapshot()
                eng.set_bounds(plo, phi)
                st = eng.solve_warm(snap)
                iters += eng.iterations
                if st is not Status.OPTIMAL:
                    return
                x = eng.x_struct()
                x[bins] = fixed
                obj = float(c @ x)
            if obj < best_obj:
                best_obj, best_x = obj, x
            return
        heapq.heappush(heap, (obj, next(counter), lo, hi, eng.snapshot(), x))

    consider(lo0, hi0, eng.x_struct(), eng.objective())
    while heap:
        bound, _, lo, hi, snap, x = heapq.heappop(heap)
        if bound >= cutoff():
            open_bound = bound
            heap.clear()
            break
        j = bins[_most_fractional(x[bins])]
        for val in (0.0, 1.0):
            clo, chi = lo.copy(), hi.copy()
            clo[j] = chi[j] = val
            eng.set_bounds(clo, chi)
            st = eng.solve_warm(snap)
            iters += eng.iterations
            nodes += 1
            if st is Status.INFEASIBLE:
                continue
            if st is not Status.OPTIMAL:
                return _limit(best_obj, best_x, iters, nodes)
            obj = eng.objective()
            if obj >= cutoff():
                continue
            consider(clo, chi, eng.x_struct(), obj)
        if nodes >= node_limit:
            return _limit(best_obj, best_x, iters, nodes, heap)

    if best_x is None:
        return Solution(Status.INFEASIBLE, iterations=iters, nodes=nodes)
    lower = min(open_bound, best_obj)
    gap = (best_obj - lower) / max(1.0, abs(best_obj))
    return Solution(Status.OPTIMAL, best_obj, best_x, iterations=iters, nodes=nodes, gap=max(gap, 0.0))


def _limit(best_obj, best_x, iters, nodes, heap=()):
    gap = math.nan
    if best_x is not None and heap:
        lower = min(h[0] for h in heap)
        gap = (best_obj - lower) / max(1.0, abs(best_obj))
    return Solution(
        Status.ITERATION_LIMIT,
        best_obj if best_x is not None else math.nan,
        best_x,
        iterations=iters,
        nodes=nodes,
        gap=gap,
    )
