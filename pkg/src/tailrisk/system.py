"""Static power-system description, validation and DC shift factors."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
import math

import numpy as np


class SystemValidationError(ValueError):
    """An invariant of the system description does not hold."""


@dataclass(frozen=True)
class TPGUnit:
    id: str
    p_min: float
    p_max: float
    ramp_up: float
    ramp_down: float
    min_on: int
    min_off: int
    cost_energy: float
    cost_startup: float
    cost_shutdown: float
    bus: str
    # status before the first simulated period
    init_on: bool = False
    init_periods: int | None = None
    init_power: float = 0.0


@dataclass(frozen=True)
class RESource:
    id: str
    kind: str
    capacity: float
    bus: str


@dataclass(frozen=True)
class SESUnit:
    id: str
    p_cap: float
    e_cap: float
    soc_lo_frac: float
    soc_hi_frac: float
    eta_ch: float
    eta_dc: float
    e_init: float
    cost_throughput: float
    bus: str

    @property
    def soc_min(self) -> float:
        return self.soc_lo_frac * self.e_cap

    @property
    def soc_max(self) -> float:
        return self.soc_hi_frac * self.e_cap

    def max_rise(self, dt: float) -> float:
        """Largest SoC increase over one period."""
        return self.eta_ch * self.p_cap * dt

    def max_fall(self, dt: float) -> float:
        """Largest SoC decrease over one period."""
        return self.p_cap / self.eta_dc * dt


@dataclass(frozen=True)
class DRResource:
    id: str
    p_cap: float
    cost: float
    bus: str


@dataclass(frozen=True)
class LoadPoint:
    id: str
    bus: str


@dataclass(frozen=True)
class TransmissionLine:
    id: str
    from_bus: str
    to_bus: str
    reactance: float
    flow_cap: float


@dataclass(frozen=True)
class PowerSystem:
    buses: tuple[str, ...]
    tpg: tuple[TPGUnit, ...] = ()
    re: tuple[RESource, ...] = ()
    ses: tuple[SESUnit, ...] = ()
    dr: tuple[DRResource, ...] = ()
    loads: tuple[LoadPoint, ...] = ()
    lines: tuple[TransmissionLine, ...] = ()
    slack_bus: str | None = None
    cost_emergency: float = 1000.0
    dt: float = 1.0
    _bus_index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_bus_index", {b: i for i, b in enumerate(self.buses)})

    def bus_index(self, bus: str) -> int:
        return self._bus_index[bus]


@dataclass(frozen=True)
class ShiftFactorMatrix:
    """``matrix[l, b]``: MW on line ``l`` per MW injected at bus ``b`` and withdrawn at the slack."""

    matrix: np.ndarray
    slack: int

    def column(self, bus_idx: int) -> np.ndarray:
        return self.matrix[:, bus_idx]

    def flows(self, injections: np.ndarray) -> np.ndarray:
        return self.matrix @ injections


def _fail(msg: str):
    raise SystemValidationError(msg)


def _check_unique(kind: str, items):
    seen = set()
    for it in items:
        if it.id in seen:
            _fail(f"{kind} {it.id}: duplicate id")
        seen.add(it.id)


def validate_system(sys: PowerSystem) -> PowerSystem:
    """Return ``sys`` unchanged if every invariant holds, else raise on the first violation."""
    if len(set(sys.buses)) != len(sys.buses) or not sys.buses:
        _fail("buses: empty or duplicated bus ids")
    if sys.slack_bus is None:
        _fail("system: no slack bus defined")
    if sys.slack_bus not in sys._bus_index:
        _fail(f"system: slack bus {sys.slack_bus} is not a bus")
    if not sys.dt > 0:
        _fail(f"system: dt must be positive, got {sys.dt}")
    if sys.cost_emergency < 0:
        _fail("system: emergency cost must be nonnegative")

    def bus_ok(kind, item, bus):
        if bus not in sys._bus_index:
            _fail(f"{kind} {item.id}: unknown bus {bus}")

    for g in sys.tpg:
        bus_ok("tpg", g, g.bus)
        if not 0 <= g.p_min <= g.p_max:
            _fail(f"tpg {g.id}: require 0 <= p_min <= p_max")
        if g.ramp_up < 0 or g.ramp_down < 0:
            _fail(f"tpg {g.id}: ramp limits must be nonnegative")
        if g.min_on < 1 or g.min_off < 1 or int(g.min_on) != g.min_on or int(g.min_off) != g.min_off:
            _fail(f"tpg {g.id}: min_on/min_off must be integers >= 1")
        if min(g.cost_energy, g.cost_startup, g.cost_shutdown) < 0:
            _fail(f"tpg {g.id}: costs must be nonnegative")
        if g.init_periods is not None and g.init_periods < 1:
            _fail(f"tpg {g.id}: init_periods must be >= 1")
        if g.init_on and not g.p_min <= g.init_power <= g.p_max:
            _fail(f"tpg {g.id}: initial power outside [p_min, p_max]")
        if not g.init_on and g.init_power != 0:
            _fail(f"tpg {g.id}: initial power must be 0 for an offline unit")
    for r in sys.re:
        bus_ok("re", r, r.bus)
        if r.kind not in ("wind", "pv"):
            _fail(f"re {r.id}: kind must be wind or pv")
        if not r.capacity > 0:
            _fail(f"re {r.id}: capacity must be positive")
    for e in sys.ses:
        bus_ok("ses", e, e.bus)
        if e.soc_lo_frac > e.soc_hi_frac:
            _fail(f"ses {e.id}: SoC bounds inverted")
        if not (0 <= e.soc_lo_frac and e.soc_hi_frac <= 1):
            _fail(f"ses {e.id}: SoC bound fractions must lie in [0, 1]")
        if not (0 < e.eta_ch <= 1 and 0 < e.eta_dc <= 1):
            _fail(f"ses {e.id}: efficiencies must lie in (0, 1]")
        if e.p_cap < 0 or not e.e_cap > 0:
            _fail(f"ses {e.id}: require p_cap >= 0 and e_cap > 0")
        if not e.soc_min <= e.e_init <= e.soc_max:
            _fail(f"ses {e.id}: initial SoC outside SoC bounds")
        if e.cost_throughput < 0:
            _fail(f"ses {e.id}: throughput cost must be nonnegative")
    for m in sys.dr:
        bus_ok("dr", m, m.bus)
        if m.p_cap < 0 or m.cost < 0:
            _fail(f"dr {m.id}: capacity and cost must be nonnegative")
    for d in sys.loads:
        bus_ok("load", d, d.bus)
    for ln in sys.lines:
        bus_ok("line", ln, ln.from_bus)
        bus_ok("line", ln, ln.to_bus)
        if ln.from_bus == ln.to_bus:
            _fail(f"line {ln.id}: from_bus equals to_bus")
        if not ln.reactance > 0:
            _fail(f"line {ln.id}: reactance must be positive")
        if not ln.flow_cap > 0:
            _fail(f"line {ln.id}: flow_cap must be positive")
    for kind, items in (("tpg", sys.tpg), ("re", sys.re), ("ses", sys.ses), ("dr", sys.dr),
                        ("load", sys.loads), ("line", sys.lines)):
        _check_unique(kind, items)

    adj = {b: [] for b in sys.buses}
    for ln in sys.lines:
        adj[ln.from_bus].append(ln.to_bus)
        adj[ln.to_bus].append(ln.from_bus)
    seen = {sys.slack_bus}
    queue = deque([sys.slack_bus])
    while queue:
        for nb in adj[queue.popleft()]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    if len(seen) != len(sys.buses):
        missing = sorted(set(sys.buses) - seen)
        _fail(f"network: not connected, unreachable buses {missing}")
    return sys


def compute_shift_factors(sys: PowerSystem) -> ShiftFactorMatrix:
    """DC power-transfer distribution factors relative to the slack bus."""
    nb, nl = len(sys.buses), len(sys.lines)
    slack = sys.bus_index(sys.slack_bus)
    if nl == 0:
        if nb > 1:
            raise SystemValidationError("network not connected / degenerate")
        return ShiftFactorMatrix(np.zeros((0, nb)), slack)
    inc = np.zeros((nl, nb))
    b = np.empty(nl)
    for l, ln in enumerate(sys.lines):
        inc[l, sys.bus_index(ln.from_bus)] = 1.0
        inc[l, sys.bus_index(ln.to_bus)] = -1.0
        b[l] = 1.0 / ln.reactance
    bf = b[:, None] * inc
    bbus = inc.T @ bf
    keep = [i for i in range(nb) if i != slack]
    sf = np.zeros((nl, nb))
    if keep:
        bred = bbus[np.ix_(keep, keep)]
        if np.linalg.matrix_rank(bred) < len(keep):
            raise SystemValidationError("network not connected / degenerate")
        sf[:, keep] = bf[:, keep] @ np.linalg.inv(bred)
    if not np.all(np.isfinite(sf)) or math.isnan(sf.sum()):
        raise SystemValidationError("network not connected / degenerate")
    return ShiftFactorMatrix(sf, slack)
