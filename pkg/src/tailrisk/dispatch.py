"""Long-term SoC reference, per-window dispatch MILP and rolling-horizon evolution."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .opt import EQ, GE, LE, MixedIntegerProgram, Status, add_pwl_convex, evaluate_pwl, solve_lp, solve_milp
from .scenarios import LD, RE, ScenarioError, ScenarioSet
from .system import PowerSystem, ShiftFactorMatrix

log = logging.getLogger(__name__)

PWL_SEGMENTS = 8
SNAP_TOL = 1e-9
MIN_COMPLETED = 0.95


class EvolutionError(RuntimeError):
    def __init__(self, msg, period=None, nodes=None, status=None, scenario=None):
        super().__init__(msg)
        self.period, self.nodes, self.status, self.scenario = period, nodes, status, scenario


class ReferenceInfeasible(EvolutionError):
    pass


@dataclass
class SystemState:
    """Boundary conditions at the start of period ``tau``.

    ``periods[g]`` counts how long unit ``g`` has been in its current status,
    i.e. X^ON when on and X^OFF when off.
    """

    on: np.ndarray
    periods: np.ndarray
    power: np.ndarray
    soc: np.ndarray
    tau: int = 0

    @classmethod
    def initial(cls, sys: PowerSystem) -> "SystemState":
        on = np.array([g.init_on for g in sys.tpg], dtype=bool)
        periods = np.array(
            [g.init_periods if g.init_periods is not None else (g.min_on if g.init_on else g.min_off)
             for g in sys.tpg],
            dtype=np.int64,
        )
        power = np.array([g.init_power if g.init_on else 0.0 for g in sys.tpg])
        soc = np.array([e.e_init for e in sys.ses], dtype=float)
        return cls(on, periods, power, soc, 0)

    def copy(self) -> "SystemState":
        return SystemState(self.on.copy(), self.periods.copy(), self.power.copy(), self.soc.copy(), self.tau)


@dataclass
class SocReference:
    """``values[e, t]``: reference SoC of storage ``e`` after period ``t`` (MWh)."""

    values: np.ndarray

    @property
    def horizon(self) -> int:
        return self.values.shape[1]

    def violations(self, sys: PowerSystem, tol: float = 1e-6) -> list[str]:
        out = []
        for e, unit in enumerate(sys.ses):
            v = self.values[e]
            if np.any(v < unit.soc_min - tol) or np.any(v > unit.soc_max + tol):
                out.append(f"ses {unit.id}: reference outside SoC bounds")
            step = np.diff(np.concatenate([[unit.e_init], v]))
            if np.any(step > unit.max_rise(sys.dt) + tol) or np.any(-step > unit.max_fall(sys.dt) + tol):
                out.append(f"ses {unit.id}: reference step exceeds power capacity")
        return out


@dataclass
class EvolutionParams:
    lookahead: int = 4
    omega_rt: float = 10.0
    gap_tol: float = 1e-6
    node_limit: int = 10**6


@dataclass
class WindowProblem:
    tau: int
    length: int
    mip: MixedIntegerProgram
    vars: dict[str, np.ndarray]
    load: np.ndarray
    re_avail: np.ndarray

    def values(self, x: np.ndarray) -> dict[str, np.ndarray]:
        return {k: x[v] for k, v in self.vars.items()}


@dataclass
class EvolutionTrace:
    """Committed per-period results of one scenario."""

    scenario: int
    eme_cost: np.ndarray
    shortage: np.ndarray
    op_cost: np.ndarray
    penalty: np.ndarray
    soc: np.ndarray
    charge: np.ndarray
    discharge: np.ndarray
    mode: np.ndarray
    on: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    power: np.ndarray
    dr: np.ndarray
    re_used: np.ndarray
    curtailment: np.ndarray
    nodes: np.ndarray

    @property
    def total_cost(self) -> float:
        return float(self.op_cost.sum())

    @property
    def horizon(self) -> int:
        return self.eme_cost.size


@dataclass
class EvolutionBatch:
    traces: dict[int, EvolutionTrace] = field(default_factory=dict)
    failures: dict[int, str] = field(default_factory=dict)

    @property
    def ordered(self) -> list[EvolutionTrace]:
        return [self.traces[k] for k in sorted(self.traces)]

    @property
    def completed_fraction(self) -> float:
        n = len(self.traces) + len(self.failures)
        return len(self.traces) / n if n else 0.0


def scenario_inputs(sys: PowerSystem, scen: ScenarioSet):
    """Map scenario series onto system RE sources and loads: ``(re[s, r, t], load[s, d, t])``."""
    pos = {sid: i for i, sid in enumerate(scen.series)}
    re_idx, ld_idx = [], []
    for r in sys.re:
        if r.id not in pos or scen.kinds[pos[r.id]] != RE:
            raise ScenarioError(f"scenario set has no RE series for source {r.id}")
        re_idx.append(pos[r.id])
    for d in sys.loads:
        if d.id not in pos or scen.kinds[pos[d.id]] != LD:
            raise ScenarioError(f"scenario set has no LD series for load {d.id}")
        ld_idx.append(pos[d.id])
    return scen.data[:, re_idx, :], scen.data[:, ld_idx, :]


def _penalty_lines(e_cap: float):
    """Tangents of ``d**2 / e_cap`` at 9 points of [-e_cap, e_cap]."""
    pts = np.linspace(-e_cap, e_cap, PWL_SEGMENTS + 1)
    return pts, 2.0 * pts / e_cap, pts**2 / e_cap


def tracking_penalty(deviation: float, omega: float, e_cap: float) -> float:
    """PWL value of ``omega * deviation**2`` as represented in the window objective."""
    pts, slopes, vals = _penalty_lines(e_cap)
    return omega * e_cap * max(evaluate_pwl(deviation, pts, slopes, vals), 0.0)


def build_window(sys: PowerSystem, sf: ShiftFactorMatrix, re_avail: np.ndarray, load: np.ndarray,
                 state: SystemState, ref: np.ndarray | None, omega_rt: float,
                 terminal: bool = False) -> WindowProblem:
    """Assemble the dispatch MILP over ``re_avail.shape[1]`` periods from ``state``.

    ``ref[e, k]`` is the SoC target for window period ``k``; it is ignored when
    ``omega_rt == 0`` or ``ref is None``.  ``terminal`` adds ``E_end >= E_init``.
    """
    re_avail = np.asarray(re_avail, dtype=float)
    load = np.asarray(load, dtype=float)
    if re_avail.ndim != 2 or load.ndim != 2:
        raise ValueError("re_avail and load must be (units, periods) arrays")
    L = max(re_avail.shape[1], load.shape[1])
    re_avail = re_avail.reshape(len(sys.re), L)
    load = load.reshape(len(sys.loads), L)
    if L < 1:
        raise ValueError("window must contain at least one period")
    dt = sys.dt
    G, R, S, M = len(sys.tpg), len(sys.re), len(sys.ses), len(sys.dr)
    mip = MixedIntegerProgram()
    idx = {k: np.zeros(shape, dtype=np.int64) for k, shape in (
        ("x", (G, L)), ("y", (G, L)), ("z", (G, L)), ("p", (G, L)), ("re", (R, L)),
        ("ch", (S, L)), ("dc", (S, L)), ("a", (S, L)), ("E", (S, L)), ("dr", (M, L)), ("bp", (L,)),
    )}
    if ref is not None and omega_rt > 0:
        idx["pen"] = np.zeros((S, L), dtype=np.int64)

    for k in range(L):
        t = state.tau + k
        for g, u in enumerate(sys.tpg):
            lo_x = hi_x = None
            if state.on[g] and state.periods[g] < u.min_on and k < u.min_on - state.periods[g]:
                lo_x = 1.0
            if not state.on[g] and state.periods[g] < u.min_off and k < u.min_off - state.periods[g]:
                hi_x = 0.0
            idx["x"][g, k] = mip.add_binary(0.0, f"x[{u.id},{t}]", lower=lo_x or 0.0,
                                            upper=1.0 if hi_x is None else hi_x)
            idx["y"][g, k] = mip.add_binary(u.cost_startup, f"y[{u.id},{t}]")
            idx["z"][g, k] = mip.add_binary(u.cost_shutdown, f"z[{u.id},{t}]")
            idx["p"][g, k] = mip.add_variable(0.0, u.p_max, u.cost_energy * dt, f"p[{u.id},{t}]")
        for r, src in enumerate(sys.re):
            idx["re"][r, k] = mip.add_variable(0.0, max(re_avail[r, k], 0.0), 0.0, f"re[{src.id},{t}]")
        for e, unit in enumerate(sys.ses):
            c = unit.cost_throughput * dt
            idx["ch"][e, k] = mip.add_variable(0.0, unit.p_cap, c, f"ch[{unit.id},{t}]")
            idx["dc"][e, k] = mip.add_variable(0.0, unit.p_cap, c, f"dc[{unit.id},{t}]")
            idx["a"][e, k] = mip.add_binary(0.0, f"a[{unit.id},{t}]")
            idx["E"][e, k] = mip.add_variable(unit.soc_min, unit.soc_max, 0.0, f"E[{unit.id},{t}]")
        for m, res in enumerate(sys.dr):
            idx["dr"][m, k] = mip.add_variable(0.0, res.p_cap, res.cost * dt, f"dr[{res.id},{t}]")
        idx["bp"][k] = mip.add_variable(0.0, math.inf, sys.cost_emergency * dt, f"bp[{t}]")

    x, y, z, p = idx["x"], idx["y"], idx["z"], idx["p"]
    for g, u in enumerate(sys.tpg):
        x_prev = 1.0 if state.on[g] else 0.0
        for k in range(L):
            mip.add_row({p[g, k]: 1.0, x[g, k]: -u.p_max}, LE, 0.0)
            if u.p_min > 0:
                mip.add_row({p[g, k]: 1.0, x[g, k]: -u.p_min}, GE, 0.0)
            if k == 0:
                mip.add_row({y[g, 0]: 1.0, z[g, 0]: -1.0, x[g, 0]: -1.0}, EQ, -x_prev)
            else:
                mip.add_row({y[g, k]: 1.0, z[g, k]: -1.0, x[g, k]: -1.0, x[g, k - 1]: 1.0}, EQ, 0.0)
            # ramp down: p_prev - p_k <= R^D x_k + Pmax (1 - x_k)
            if u.ramp_down < u.p_max:
                if k == 0:
                    mip.add_row({p[g, 0]: -1.0, x[g, 0]: u.p_max - u.ramp_down}, LE, u.p_max - state.power[g])
                else:
                    mip.add_row({p[g, k - 1]: 1.0, p[g, k]: -1.0, x[g, k]: u.p_max - u.ramp_down}, LE, u.p_max)
            # ramp up: p_k - p_prev <= R^U x_prev + Pmax (1 - x_prev)
            if u.ramp_up < u.p_max:
                if k == 0:
                    rhs = state.power[g] + u.ramp_up * x_prev + u.p_max * (1.0 - x_prev)
                    mip.add_row({p[g, 0]: 1.0}, LE, rhs)
                else:
                    mip.add_row({p[g, k]: 1.0, p[g, k - 1]: -1.0, x[g, k - 1]: u.p_max - u.ramp_up}, LE, u.p_max)
            up = {y[g, i]: 1.0 for i in range(max(0, k - u.min_on + 1), k + 1)}
            if len(up) > 1:
                up[x[g, k]] = -1.0
                mip.add_row(up, LE, 0.0)
            down = {z[g, i]: 1.0 for i in range(max(0, k - u.min_off + 1), k + 1)}
            if len(down) > 1:
                down[x[g, k]] = 1.0
                mip.add_row(down, LE, 1.0)

    ch, dc, a, E = idx["ch"], idx["dc"], idx["a"], idx["E"]
    for e, unit in enumerate(sys.ses):
        for k in range(L):
            mip.add_row({ch[e, k]: 1.0, a[e, k]: -unit.p_cap}, LE, 0.0)
            mip.add_row({dc[e, k]: 1.0, a[e, k]: unit.p_cap}, LE, unit.p_cap)
            row = {E[e, k]: 1.0, ch[e, k]: -unit.eta_ch * dt, dc[e, k]: dt / unit.eta_dc}
            if k == 0:
                mip.add_row(row, EQ, state.soc[e])
            else:
                row[E[e, k - 1]] = -1.0
                mip.add_row(row, EQ, 0.0)
        if terminal:
            mip.add_row({E[e, L - 1]: 1.0}, GE, unit.e_init)

    for k in range(L):
        bal = {idx["bp"][k]: 1.0}
        for g in range(G):
            bal[p[g, k]] = 1.0
        for r in range(R):
            bal[idx["re"][r, k]] = 1.0
        for m in range(M):
            bal[idx["dr"][m, k]] = 1.0
        for e in range(S):
            bal[dc[e, k]] = 1.0
            bal[ch[e, k]] = -1.0
        mip.add_row(bal, GE, float(load[:, k].sum()))

    bus = sys.bus_index
    for l, line in enumerate(sys.lines):
        col = sf.matrix[l]
        g_sf = [col[bus(u.bus)] for u in sys.tpg]
        r_sf = [col[bus(u.bus)] for u in sys.re]
        e_sf = [col[bus(u.bus)] for u in sys.ses]
        m_sf = [col[bus(u.bus)] for u in sys.dr]
        d_sf = np.array([col[bus(d.bus)] for d in sys.loads])
        for k in range(L):
            expr = {}
            for g in range(G):
                expr[p[g, k]] = g_sf[g]
            for r in range(R):
                expr[idx["re"][r, k]] = r_sf[r]
            for e in range(S):
                expr[dc[e, k]] = e_sf[e]
                expr[ch[e, k]] = -e_sf[e]
            for m in range(M):
                expr[idx["dr"][m, k]] = m_sf[m]
            expr = {j: v for j, v in expr.items() if abs(v) > 1e-12}
            if not expr:
                continue
            base = float(d_sf @ load[:, k]) if d_sf.size else 0.0
            mip.add_row(expr, LE, line.flow_cap + base)
            mip.add_row(expr, GE, -line.flow_cap + base)

    if "pen" in idx:
        for e, unit in enumerate(sys.ses):
            pts, slopes, vals = _penalty_lines(unit.e_cap)
            for k in range(L):
                idx["pen"][e, k] = add_pwl_convex(
                    mip, int(E[e, k]), ref[e, k] + pts, slopes, vals,
                    weight=omega_rt * unit.e_cap, lower=0.0, name=f"pen[{unit.id},{state.tau + k}]",
                )
    return WindowProblem(state.tau, L, mip, idx, load, re_avail)


def build_longterm_reference(sys: PowerSystem, sf: ShiftFactorMatrix, rep: ScenarioSet) -> SocReference:
    """LP-relaxed full-horizon dispatch against the mean scenario, with terminal SoC enforced."""
    if rep.n_scenarios < 1:
        raise ScenarioError("representative scenario set is empty")
    re_all, ld_all = scenario_inputs(sys, rep)
    re_mean, ld_mean = re_all.mean(axis=0), ld_all.mean(axis=0)
    state = SystemState.initial(sys)
    T = rep.horizon

    def solve_prefix(n, terminal):
        win = build_window(sys, sf, re_mean[:, :n], ld_mean[:, :n], state, None, 0.0, terminal=terminal)
        return win, solve_lp(win.mip.relaxation())

    win, sol = solve_prefix(T, True)
    if sol.status is Status.OPTIMAL:
        return SocReference(sol.x[win.vars["E"]].reshape(len(sys.ses), T))
    if sol.status is not Status.INFEASIBLE:
        raise ReferenceInfeasible(f"reference problem not solved: {sol.status.value}", status=sol.status)
    lo, hi = 1, T
    while lo < hi:
        mid = (lo + hi) // 2
        if solve_prefix(mid, mid == T)[1].status is Status.INFEASIBLE:
            hi = mid
        else:
            lo = mid + 1
    period = lo - 1
    raise ReferenceInfeasible(f"reference problem infeasible: first violated period {period}", period=period,
                              status=Status.INFEASIBLE)


def _snap(v: float, lo: float, hi: float) -> float:
    if abs(v - lo) <= SNAP_TOL * max(1.0, abs(lo)):
        return lo
    if abs(v - hi) <= SNAP_TOL * max(1.0, abs(hi)):
        return hi
    return min(max(v, lo), hi)


class _Recorder:
    def __init__(self, sys: PowerSystem, T: int, scenario: int):
        G, R, S, M = len(sys.tpg), len(sys.re), len(sys.ses), len(sys.dr)
        f = lambda *s: np.zeros(s)  # noqa: E731
        self.trace = EvolutionTrace(
            scenario, f(T), f(T), f(T), f(T), f(S, T), f(S, T), f(S, T), np.zeros((S, T), dtype=np.int8),
            np.zeros((G, T), dtype=np.int8), np.zeros((G, T), dtype=np.int8), np.zeros((G, T), dtype=np.int8),
            f(G, T), f(M, T), f(R, T), f(R, T), np.zeros(T, dtype=np.int64),
        )


def commit_period(sys: PowerSystem, win: WindowProblem, x: np.ndarray, state: SystemState,
                  ref_now: np.ndarray | None, omega_rt: float, trace: EvolutionTrace, nodes: int = 0) -> SystemState:
    """Record window period 0 into ``trace`` and return the next state."""
    t, dt, v = state.tau, sys.dt, win.vars
    new = state.copy()
    supply = 0.0
    op = 0.0
    for g, u in enumerate(sys.tpg):
        on = bool(round(x[v["x"][g, 0]]))
        pw = _snap(float(x[v["p"][g, 0]]), u.p_min, u.p_max) if on else 0.0
        start, stop = on and not state.on[g], state.on[g] and not on
        trace.on[g, t], trace.start[g, t], trace.stop[g, t], trace.power[g, t] = on, start, stop, pw
        op += u.cost_startup * start + u.cost_shutdown * stop + u.cost_energy * pw * dt
        supply += pw
        if on == state.on[g]:
            new.periods[g] += 1
        else:
            new.on[g], new.periods[g] = on, 1
        new.power[g] = pw
    for r in range(len(sys.re)):
        avail = max(float(win.re_avail[r, 0]), 0.0)
        used = _snap(float(x[v["re"][r, 0]]), 0.0, avail)
        trace.re_used[r, t], trace.curtailment[r, t] = used, avail - used
        supply += used
    for m, res in enumerate(sys.dr):
        d = _snap(float(x[v["dr"][m, 0]]), 0.0, res.p_cap)
        trace.dr[m, t] = d
        op += res.cost * d * dt
        supply += d
    penalty = 0.0
    for e, unit in enumerate(sys.ses):
        charging = bool(round(x[v["a"][e, 0]]))
        ch = _snap(float(x[v["ch"][e, 0]]), 0.0, unit.p_cap) if charging else 0.0
        dc = 0.0 if charging else _snap(float(x[v["dc"][e, 0]]), 0.0, unit.p_cap)
        soc = state.soc[e] + (unit.eta_ch * ch - dc / unit.eta_dc) * dt
        trace.mode[e, t], trace.charge[e, t], trace.discharge[e, t], trace.soc[e, t] = charging, ch, dc, soc
        op += unit.cost_throughput * (ch + dc) * dt
        supply += dc - ch
        new.soc[e] = soc
        if ref_now is not None and omega_rt > 0:
            penalty += tracking_penalty(soc - ref_now[e], omega_rt, unit.e_cap)
    demand = float(win.load[:, 0].sum())
    shortage = demand - supply
    if shortage <= SNAP_TOL * max(1.0, demand):
        shortage = 0.0
    eme = sys.cost_emergency * shortage * dt
    trace.shortage[t], trace.eme_cost[t] = shortage, eme
    trace.op_cost[t], trace.penalty[t], trace.nodes[t] = op + eme, penalty, nodes
    new.tau = t + 1
    return new


def evolve_scenario(sys: PowerSystem, sf: ShiftFactorMatrix, re_avail: np.ndarray, load: np.ndarray,
                    ref: SocReference, params: EvolutionParams, scenario: int = 0,
                    state: SystemState | None = None) -> EvolutionTrace:
    """Rolling-horizon evolution with stride 1; windows are truncated at the horizon end."""
    T = max(load.shape[1], re_avail.shape[1])
    if ref.horizon != T:
        raise ScenarioError(f"scenario horizon {T} differs from reference horizon {ref.horizon}")
    state = state.copy() if state is not None else SystemState.initial(sys)
    trace = _Recorder(sys, T, scenario).trace
    for tau in range(state.tau, T):
        end = min(tau + params.lookahead, T - 1) + 1
        ref_slice = ref.values[:, tau:end]
        win = build_window(sys, sf, re_avail[:, tau:end], load[:, tau:end], state, ref_slice, params.omega_rt)
        sol = solve_milp(win.mip, params.gap_tol, params.node_limit)
        if sol.status is not Status.OPTIMAL:
            raise EvolutionError(
                f"scenario {scenario}: window at period {tau} returned {sol.status.value} after {sol.nodes} nodes",
                period=tau, nodes=sol.nodes, status=sol.status, scenario=scenario,
            )
        state = commit_period(sys, win, sol.x, state, ref.values[:, tau], params.omega_rt, trace, sol.nodes)
    return trace


def _evolve_task(args):
    sys, sf, re_avail, load, ref, params, s = args
    try:
        return s, evolve_scenario(sys, sf, re_avail, load, ref, params, s), None
    except EvolutionError as exc:
        return s, None, str(exc)


def evolve_all(sys: PowerSystem, sf: ShiftFactorMatrix, rep: ScenarioSet, ref: SocReference,
               params: EvolutionParams, jobs: int = 1) -> EvolutionBatch:
    """Evolve every scenario independently; results are keyed by scenario index."""
    re_all, ld_all = scenario_inputs(sys, rep)
    tasks = [(sys, sf, re_all[s], ld_all[s], ref, params, s) for s in range(rep.n_scenarios)]
    batch = EvolutionBatch()
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evolve_task, tasks))
    else:
        results = [_evolve_task(t) for t in tasks]
    for s, trace, err in results:
        if trace is None:
            batch.failures[s] = err
            log.warning(err)
        else:
            batch.traces[s] = trace
    if batch.completed_fraction < MIN_COMPLETED:
        raise EvolutionError(
            f"only {len(batch.traces)} of {rep.n_scenarios} scenarios completed; first failure: "
            f"{next(iter(batch.failures.values()), '')}"
        )
    return batch


__all__ = [
    "EvolutionBatch", "EvolutionError", "EvolutionParams", "EvolutionTrace", "ReferenceInfeasible",
    "SocReference", "SystemState", "WindowProblem", "build_longterm_reference", "build_window",
    "commit_period", "evolve_all", "evolve_scenario", "scenario_inputs", "tracking_penalty",
]
