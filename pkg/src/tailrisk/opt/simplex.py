"""Bounded-variable revised simplex.

Every row ``i`` of ``A x (<=|==|>=) b`` gets a slack ``s_i`` and an artificial
``r_i`` so that the working system is ``A x + s + r = b`` with all columns
carrying bounds.  Slacks encode the relation (``<=``: s >= 0, ``>=``: s <= 0,
``==``: s = 0); artificials are only unfixed during phase 1 of a cold start.

The engine keeps its basis between solves so branch-and-bound can re-solve a
child node with the dual simplex from the parent's optimal basis.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .model import Status

LOWER, UPPER, FREE, BASIC = 0, 1, 2, 3

PRIMAL_TOL = 1e-9
PIVOT_TOL = 1e-9
PHASE1_TOL = 1e-7
DEGENERATE_STEP = 1e-12
REFACTOR_EVERY = 64
DENSE_LIMIT = 600
SNAPSHOT_FACTOR_LIMIT = 300


class SingularBasis(RuntimeError):
    pass


class DenseBasis:
    """Explicit basis inverse with product-form rank-one updates."""

    def __init__(self, A: sp.csc_matrix, basis: np.ndarray):
        m = len(basis)
        B = A[:, basis].toarray() if m else np.zeros((0, 0))
        try:
            self.inv = np.linalg.inv(B) if m else B
        except np.linalg.LinAlgError as exc:
            raise SingularBasis(str(exc)) from exc
        if m and not np.all(np.isfinite(self.inv)):
            raise SingularBasis("non-finite basis inverse")
        self.updates = 0

    def ftran(self, v):
        return self.inv @ v

    def btran(self, v):
        return v @ self.inv

    def row(self, r):
        return self.inv[r].copy()

    def update(self, r, w):
        row_r = self.inv[r] / w[r]
        self.inv -= np.outer(w, row_r)
        self.inv[r] = row_r
        self.updates += 1


class SparseBasis:
    """SuperLU factor of the basis plus an eta file of column replacements."""

    def __init__(self, A: sp.csc_matrix, basis: np.ndarray):
        try:
            self.lu = splu(A[:, basis].tocsc())
        except RuntimeError as exc:
            raise SingularBasis(str(exc)) from exc
        self.etas: list[tuple[int, np.ndarray]] = []
        self.updates = 0
        self.m = len(basis)

    def ftran(self, v):
        x = self.lu.solve(np.asarray(v, dtype=float))
        for r, w in self.etas:
            xr = x[r] / w[r]
            x -= w * xr
            x[r] = xr
        return x

    def btran(self, v):
        u = np.array(v, dtype=float)
        for r, w in reversed(self.etas):
            u[r] = (u[r] - (w @ u - w[r] * u[r])) / w[r]
        return self.lu.solve(u, trans="T")

    def row(self, r):
        e = np.zeros(self.m)
        e[r] = 1.0
        return self.btran(e)

    def update(self, r, w):
        self.etas.append((r, w.copy()))
        self.updates += 1


class BoundedSimplex:
    """Reusable simplex engine for ``min c x  s.t.  A x ~ b, lo <= x <= hi``."""

    def __init__(self, A, b, senses, c):
        A = sp.csc_matrix(A, dtype=float)
        m, n = A.shape
        self.m, self.n = m, n
        eye = sp.identity(m, format="csc")
        self.A = sp.hstack([A, eye, eye], format="csc")
        self.AT = self.A.T.tocsr()
        self.b = np.asarray(b, dtype=float)
        self.c = np.concatenate([np.asarray(c, dtype=float), np.zeros(2 * m)])
        senses = np.asarray(senses)
        # 0: <=, 1: ==, 2: >=  (index into model._SENSES)
        self.slack_lo = np.where(senses == 2, -math.inf, 0.0)
        self.slack_hi = np.where(senses == 0, math.inf, 0.0)
        self.N = n + 2 * m
        self.max_iter = 50 * (m + n) + 50
        self.bland_after = 5 * (m + n) + 5
        self.dtol = 1e-9 * max(1.0, float(np.max(np.abs(self.c), initial=0.0)))
        self._indptr = self.A.indptr
        self._indices = self.A.indices
        self._data = self.A.data
        self.basis = None
        self.status = None
        self.iterations = 0

    # ------------------------------------------------------------------ setup
    def set_bounds(self, lo, hi):
        m = self.m
        self.lo = np.concatenate([np.asarray(lo, dtype=float), self.slack_lo, np.zeros(m)])
        self.hi = np.concatenate([np.asarray(hi, dtype=float), self.slack_hi, np.zeros(m)])
        self.movable = self.hi > self.lo

    def _column(self, j):
        v = np.zeros(self.m)
        s, e = self._indptr[j], self._indptr[j + 1]
        v[self._indices[s:e]] = self._data[s:e]
        return v

    def _factor(self):
        cls = DenseBasis if self.m <= DENSE_LIMIT else SparseBasis
        self.lu = cls(self.A, self.basis)

    def _nonbasic_values(self):
        st = self.status
        x = np.where(st == LOWER, self.lo, np.where(st == UPPER, self.hi, 0.0))
        x[self.basis] = 0.0
        return x

    def _recompute_xb(self):
        xn = self._nonbasic_values()
        self.xB = self.lu.ftran(self.b - self.A @ xn)

    def _repair_status(self):
        """Keep nonbasic statuses consistent with (possibly new) bounds."""
        st = self.status
        nb = st != BASIC
        bad_lo = nb & (st == LOWER) & ~np.isfinite(self.lo)
        st[bad_lo] = np.where(np.isfinite(self.hi[bad_lo]), UPPER, FREE)
        bad_hi = nb & (st == UPPER) & ~np.isfinite(self.hi)
        st[bad_hi] = np.where(np.isfinite(self.lo[bad_hi]), LOWER, FREE)
        free = nb & (st == FREE)
        st[free & np.isfinite(self.lo)] = LOWER
        st[free & ~np.isfinite(self.lo) & np.isfinite(self.hi)] = UPPER

    def x_full(self):
        x = self._nonbasic_values()
        x[self.basis] = self.xB
        return x

    def x_struct(self):
        return self.x_full()[: self.n]

    def objective(self):
        return float(self.c[: self.n] @ self.x_struct())

    def snapshot(self):
        factor = None
        if isinstance(self.lu, DenseBasis) and self.m <= SNAPSHOT_FACTOR_LIMIT:
            factor = (self.lu.inv.copy(), self.lu.updates)
        return self.basis.copy(), self.status.copy(), factor

    # ----------------------------------------------------------------- drivers
    def solve_cold(self) -> Status:
        self.iterations = 0
        try:
            st = self._dual_start()
            if st is not None:
                return st
            self.iterations = 0
            return self._cold()
        except SingularBasis:
            return Status.ITERATION_LIMIT

    def _dual_start(self) -> Status | None:
        """Dual simplex from the slack basis when that basis is dual feasible.

        Holds whenever each structural column can rest at a bound matching
        the sign of its cost; returns None otherwise so the caller falls back
        to the two-phase primal.
        """
        n, m = self.n, self.m
        lo, hi, c = self.lo[:n], self.hi[:n], self.c[:n]
        st = np.full(self.N, LOWER, dtype=np.int8)
        fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
        st[:n] = np.where(c > 0, LOWER, np.where(c < 0, UPPER, np.where(fin_lo, LOWER, np.where(fin_hi, UPPER, FREE))))
        ok = np.where(c > 0, fin_lo, np.where(c < 0, fin_hi, True))
        if not ok.all():
            return None
        self.lo[n + m:] = 0.0
        self.hi[n + m:] = 0.0
        self.movable = self.hi > self.lo
        basis = np.arange(n, n + m, dtype=np.int64)
        st[basis] = BASIC
        self.basis, self.status = basis, st
        self._repair_status()
        self._factor()
        self._recompute_xb()
        res = self._dual(self.c)
        if res is Status.OPTIMAL:
            res = self._primal(self.c)
        if res is Status.ITERATION_LIMIT:
            return None
        return res

    def solve_warm(self, snap) -> Status:
        """Re-solve after a bound change starting from a stored basis."""
        self.iterations = 0
        self.basis, self.status = snap[0].copy(), snap[1].copy()
        self._repair_status()
        try:
            if snap[2] is not None:
                self.lu = DenseBasis.__new__(DenseBasis)
                self.lu.inv, self.lu.updates = snap[2][0].copy(), snap[2][1]
            else:
                self._factor()
            self._recompute_xb()
            st = self._dual(self.c)
            if st is Status.OPTIMAL:
                st = self._primal(self.c)
            if st is not Status.ITERATION_LIMIT:
                return st
        except SingularBasis:
            pass
        return self.solve_cold()

    def _cold(self) -> Status:
        n, m = self.n, self.m
        lo, hi = self.lo, self.hi
        lo[n + m:] = 0.0
        hi[n + m:] = 0.0
        st = np.full(self.N, LOWER, dtype=np.int8)
        s_lo, s_hi = lo[:n], hi[:n]
        st[:n] = np.where(np.isfinite(s_lo), LOWER, np.where(np.isfinite(s_hi), UPPER, FREE))
        xs = np.where(st[:n] == LOWER, s_lo, np.where(st[:n] == UPPER, s_hi, 0.0))
        resid = self.b - self.A[:, :n] @ xs
        basis = np.empty(m, dtype=np.int64)
        cost1 = np.zeros(self.N)
        for i in range(m):
            sj, aj = n + i, n + m + i
            if self.slack_lo[i] - PRIMAL_TOL <= resid[i] <= self.slack_hi[i] + PRIMAL_TOL:
                basis[i] = sj
            else:
                basis[i] = aj
                st[sj] = LOWER if self.slack_lo[i] == 0.0 else UPPER
                if resid[i] > 0:
                    hi[aj] = math.inf
                    cost1[aj] = 1.0
                else:
                    lo[aj] = -math.inf
                    cost1[aj] = -1.0
        st[basis] = BASIC
        self.basis, self.status = basis, st
        self.movable = hi > lo
        self._factor()
        self._recompute_xb()
        if cost1.any():
            res = self._primal(cost1)
            if res is not Status.OPTIMAL:
                return Status.ITERATION_LIMIT if res is Status.ITERATION_LIMIT else Status.INFEASIBLE
            infeas = float(np.abs(self.x_full()[n + m:]).sum())
            if infeas > PHASE1_TOL:
                return Status.INFEASIBLE
            lo[n + m:] = 0.0
            hi[n + m:] = 0.0
            self.movable = hi > lo
            self._repair_status()
            self._recompute_xb()
        return self._primal(self.c)

    def _after_pivot(self, r, w):
        self.lu.update(r, w)
        if self.lu.updates >= REFACTOR_EVERY:
            self._factor()
            self._recompute_xb()

    # ------------------------------------------------------------------ primal
    def _primal(self, cost) -> Status:
        bland = False
        degenerate = 0
        lo, hi = self.lo, self.hi
        while True:
            if self.iterations >= self.max_iter:
                return Status.ITERATION_LIMIT
            basis, st = self.basis, self.status
            y = self.lu.btran(cost[basis])
            d = cost - self.AT @ y
            up = ((st == LOWER) | (st == FREE)) & (d < -self.dtol) & self.movable
            down = ((st == UPPER) | (st == FREE)) & (d > self.dtol) & self.movable
            elig = up | down
            if bland:
                cand = np.flatnonzero(elig)
                if cand.size == 0:
                    return Status.OPTIMAL
                q = int(cand[0])
            else:
                score = np.where(elig, np.abs(d), 0.0)
                q = int(np.argmax(score))
                if score[q] == 0.0:
                    return Status.OPTIMAL
            self.iterations += 1
            dirn = 1.0 if up[q] else -1.0
            w = self.lu.ftran(self._column(q))
            delta = -dirn * w
            xb = self.xB
            lb, ub = lo[basis], hi[basis]
            dec = delta < -PIVOT_TOL
            inc = delta > PIVOT_TOL
            tol = 0.0 if bland else PRIMAL_TOL
            t_h = np.full(self.m, math.inf)
            t_h[dec] = (xb[dec] - lb[dec] + tol) / -delta[dec]
            t_h[inc] = (ub[inc] - xb[inc] + tol) / delta[inc]
            theta_h = float(t_h.min()) if self.m else math.inf
            span = hi[q] - lo[q]
            if span <= theta_h:
                if not math.isfinite(span):
                    return Status.UNBOUNDED
                self.xB = xb + span * delta
                st[q] = UPPER if dirn > 0 else LOWER
                degenerate = 0
                continue
            t_true = np.full(self.m, math.inf)
            t_true[dec] = (xb[dec] - lb[dec]) / -delta[dec]
            t_true[inc] = (ub[inc] - xb[inc]) / delta[inc]
            np.maximum(t_true, 0.0, out=t_true)
            if bland:
                tmin = t_true.min()
                ties = np.flatnonzero(t_true <= tmin + DEGENERATE_STEP)
                r = int(ties[np.argmin(basis[ties])])
            else:
                ties = np.flatnonzero(t_h <= theta_h)
                r = int(ties[np.argmax(np.abs(delta[ties]))])
            theta = float(t_true[r])
            xq = self._value(q) + dirn * theta
            leaving = basis[r]
            st[leaving] = LOWER if delta[r] < 0 else UPPER
            self.xB = xb + theta * delta
            self.xB[r] = xq
            basis[r] = q
            st[q] = BASIC
            if theta <= DEGENERATE_STEP:
                degenerate += 1
                if degenerate > self.bland_after:
                    bland = True
            else:
                degenerate = 0
            self._after_pivot(r, w)

    def _value(self, j):
        s = self.status[j]
        if s == LOWER:
            return self.lo[j]
        if s == UPPER:
            return self.hi[j]
        return 0.0

    # -------------------------------------------------------------------- dual
    def _dual(self, cost) -> Status:
        """Dual simplex from a dual-feasible basis; returns OPTIMAL once primal feasible."""
        bland = False
        degenerate = 0
        lo, hi = self.lo, self.hi
        while True:
            if self.iterations >= self.max_iter:
                return Status.ITERATION_LIMIT
            basis, st = self.basis, self.status
            xb = self.xB
            lb, ub = lo[basis], hi[basis]
            viol = np.maximum(lb - xb, xb - ub)
            if bland:
                bad = np.flatnonzero(viol > PRIMAL_TOL)
                if bad.size == 0:
                    return Status.OPTIMAL
                r = int(bad[np.argmin(basis[bad])])
            else:
                r = int(np.argmax(viol)) if self.m else 0
                if not self.m or viol[r] <= PRIMAL_TOL:
                    return Status.OPTIMAL
            self.iterations += 1
            below = xb[r] < lb[r]
            target = lb[r] if below else ub[r]
            alpha = self.AT @ self.lu.row(r)
            y = self.lu.btran(cost[basis])
            d = cost - self.AT @ y
            at_lo = (st == LOWER) & self.movable
            at_hi = (st == UPPER) & self.movable
            free = (st == FREE) & self.movable
            if below:
                elig = (at_lo & (alpha < -PIVOT_TOL)) | (at_hi & (alpha > PIVOT_TOL))
            else:
                elig = (at_lo & (alpha > PIVOT_TOL)) | (at_hi & (alpha < -PIVOT_TOL))
            elig |= free & (np.abs(alpha) > PIVOT_TOL)
            cand = np.flatnonzero(elig)
            if cand.size == 0:
                return Status.INFEASIBLE
            dd = np.where(st[cand] == LOWER, np.maximum(d[cand], 0.0),
                          np.where(st[cand] == UPPER, np.maximum(-d[cand], 0.0), 0.0))
            aa = np.abs(alpha[cand])
            ratio = dd / aa
            if bland:
                tmin = ratio.min()
                q = int(cand[np.flatnonzero(ratio <= tmin + DEGENERATE_STEP)[0]])
            else:
                bound = ((dd + self.dtol) / aa).min()
                ties = np.flatnonzero(ratio <= bound)
                q = int(cand[ties[np.argmax(aa[ties])]])
            theta_d = float(ratio[np.searchsorted(cand, q)])
            w = self.lu.ftran(self._column(q))
            if abs(w[r]) < PIVOT_TOL:
                raise SingularBasis("dual pivot too small")
            step = (xb[r] - target) / w[r]
            xq = self._value(q) + step
            leaving = basis[r]
            st[leaving] = LOWER if below else UPPER
            self.xB = xb - step * w
            self.xB[r] = xq
            basis[r] = q
            st[q] = BASIC
            if theta_d <= DEGENERATE_STEP:
                degenerate += 1
                if degenerate > self.bland_after:
                    bland = True
            else:
                degenerate = 0
            self._after_pivot(r, w)
