"""Standalone feasibility check of committed trajectories.

Works only from the system data, the realised inputs and the trace; nothing
here touches the optimisation model.
"""

from __future__ import annotations

import numpy as np

from .dispatch import EvolutionTrace, SystemState
from .system import PowerSystem, ShiftFactorMatrix

TOL = 1e-6


def _runs(status: np.ndarray):
    """``(value, start, length)`` for each maximal run of equal entries."""
    out, start = [], 0
    for t in range(1, status.size + 1):
        if t == status.size or status[t] != status[start]:
            out.append((int(status[start]), start, t - start))
            start = t
    return out


def verify_trace(sys: PowerSystem, sf: ShiftFactorMatrix, re_avail: np.ndarray, load: np.ndarray,
                 trace: EvolutionTrace, state: SystemState | None = None, tol: float = TOL) -> list[str]:
    """Return a list of human-readable violations; empty means the trace is feasible."""
    state = state or SystemState.initial(sys)
    T, dt = trace.horizon, sys.dt
    bad: list[str] = []

    def check(cond, msg):
        if not cond:
            bad.append(msg)

    for g, u in enumerate(sys.tpg):
        x = trace.on[g].astype(int)
        y, z, p = trace.start[g].astype(int), trace.stop[g].astype(int), trace.power[g]
        x_prev = np.concatenate([[int(state.on[g])], x[:-1]])
        p_prev = np.concatenate([[state.power[g]], p[:-1]])
        for t in np.flatnonzero(y - z != x - x_prev):
            bad.append(f"tpg {u.id} t={t}: start/stop inconsistent with status change")
        for t in np.flatnonzero((p < u.p_min * x - tol) | (p > u.p_max * x + tol)):
            bad.append(f"tpg {u.id} t={t}: power {p[t]} outside [{u.p_min * x[t]}, {u.p_max * x[t]}]")
        down = p_prev - p - (u.ramp_down * x + u.p_max * (1 - x))
        for t in np.flatnonzero(down > tol):
            bad.append(f"tpg {u.id} t={t}: ramp-down limit exceeded by {down[t]}")
        up = p - p_prev - (u.ramp_up * x_prev + u.p_max * (1 - x_prev))
        for t in np.flatnonzero(up > tol):
            bad.append(f"tpg {u.id} t={t}: ramp-up limit exceeded by {up[t]}")
        runs = _runs(x)
        for i, (val, start, length) in enumerate(runs):
            if i == len(runs) - 1:
                break  # still open at the horizon end
            if i == 0 and val == int(state.on[g]):
                length += int(state.periods[g])
            need = u.min_on if val else u.min_off
            if length < need:
                kind = "on" if val else "off"
                bad.append(f"tpg {u.id} t={start}: {kind}-run of {length} periods shorter than {need}")
        if runs and runs[0][0] != int(state.on[g]):
            # a switch at t=0 closes the run carried in from before the horizon
            need = u.min_on if state.on[g] else u.min_off
            if state.periods[g] < need:
                bad.append(f"tpg {u.id} t=0: switched after {state.periods[g]} periods (< {need})")

    for r, src in enumerate(sys.re):
        used = trace.re_used[r]
        for t in np.flatnonzero((used < -tol) | (used > re_avail[r] + tol)):
            bad.append(f"re {src.id} t={t}: used {used[t]} outside [0, {re_avail[r, t]}]")

    for e, unit in enumerate(sys.ses):
        ch, dc, a, E = trace.charge[e], trace.discharge[e], trace.mode[e].astype(int), trace.soc[e]
        check(np.all((a == 0) | (a == 1)), f"ses {unit.id}: mode not binary")
        for t in np.flatnonzero((ch < -tol) | (ch > a * unit.p_cap + tol)):
            bad.append(f"ses {unit.id} t={t}: charge {ch[t]} outside [0, a P]")
        for t in np.flatnonzero((dc < -tol) | (dc > (1 - a) * unit.p_cap + tol)):
            bad.append(f"ses {unit.id} t={t}: discharge {dc[t]} outside [0, (1-a) P]")
        for t in np.flatnonzero(ch * dc != 0.0):
            bad.append(f"ses {unit.id} t={t}: simultaneous charge and discharge")
        for t in np.flatnonzero((E < unit.soc_min - tol) | (E > unit.soc_max + tol)):
            bad.append(f"ses {unit.id} t={t}: SoC {E[t]} outside bounds")
        prev = state.soc[e]
        for t in range(T):
            expect = prev + (unit.eta_ch * ch[t] - dc[t] / unit.eta_dc) * dt
            if E[t] != expect:
                bad.append(f"ses {unit.id} t={t}: SoC recursion off by {E[t] - expect}")
            prev = E[t]

    for m, res in enumerate(sys.dr):
        d = trace.dr[m]
        for t in np.flatnonzero((d < -tol) | (d > res.p_cap + tol)):
            bad.append(f"dr {res.id} t={t}: {d[t]} outside [0, {res.p_cap}]")

    net_ses = trace.discharge - trace.charge
    supply = trace.power.sum(axis=0) + trace.re_used.sum(axis=0) + trace.dr.sum(axis=0) + net_ses.sum(axis=0)
    demand = load.sum(axis=0)
    check(np.all(trace.shortage >= 0), "emergency power negative")
    for t in np.flatnonzero(supply + trace.shortage < demand - tol):
        bad.append(f"t={t}: balance short by {demand[t] - supply[t] - trace.shortage[t]}")
    eme = sys.cost_emergency * trace.shortage * dt
    for t in np.flatnonzero(np.abs(trace.eme_cost - eme) > tol * np.maximum(1.0, eme)):
        bad.append(f"t={t}: emergency cost {trace.eme_cost[t]} != c_EME p_B dt = {eme[t]}")

    if sys.lines:
        bus = sys.bus_index
        inj = np.zeros((len(sys.buses), T))
        for g, u in enumerate(sys.tpg):
            inj[bus(u.bus)] += trace.power[g]
        for r, u in enumerate(sys.re):
            inj[bus(u.bus)] += trace.re_used[r]
        for e, u in enumerate(sys.ses):
            inj[bus(u.bus)] += net_ses[e]
        for m, u in enumerate(sys.dr):
            inj[bus(u.bus)] += trace.dr[m]
        for d, u in enumerate(sys.loads):
            inj[bus(u.bus)] -= load[d]
        flows = sf.matrix @ inj
        for l, line in enumerate(sys.lines):
            for t in np.flatnonzero(np.abs(flows[l]) > line.flow_cap + tol):
                bad.append(f"line {line.id} t={t}: flow {flows[l, t]} exceeds {line.flow_cap}")

    op = np.zeros(T)
    for g, u in enumerate(sys.tpg):
        op += u.cost_startup * trace.start[g] + u.cost_shutdown * trace.stop[g] + u.cost_energy * trace.power[g] * dt
    for e, u in enumerate(sys.ses):
        op += u.cost_throughput * (trace.charge[e] + trace.discharge[e]) * dt
    for m, u in enumerate(sys.dr):
        op += u.cost * trace.dr[m] * dt
    op += eme
    for t in np.flatnonzero(np.abs(trace.op_cost - op) > tol * np.maximum(1.0, np.abs(op))):
        bad.append(f"t={t}: operating cost {trace.op_cost[t]} != recomputed {op[t]}")
    return bad
