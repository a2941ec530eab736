"""Small synthetic systems and histories for demos, tests and timing."""

from __future__ import annotations

import numpy as np

from .scenarios import LD, RE, ScenarioSet
from .system import (DRResource, LoadPoint, PowerSystem, RESource, SESUnit, TPGUnit, TransmissionLine,
                     validate_system)


def desk_system(cost_emergency: float = 1000.0) -> PowerSystem:
    """Three-bus triangle with two thermal units, wind, PV, one storage and one DR block."""
    return validate_system(PowerSystem(
        buses=("b1", "b2", "b3"),
        tpg=(
            TPGUnit("g1", 60.0, 200.0, 80.0, 80.0, 4, 3, 30.0, 800.0, 100.0, "b1"),
            TPGUnit("g2", 20.0, 100.0, 60.0, 60.0, 2, 2, 60.0, 300.0, 50.0, "b2"),
        ),
        re=(RESource("wind", "wind", 150.0, "b2"), RESource("pv", "pv", 100.0, "b3")),
        ses=(SESUnit("ses", 50.0, 400.0, 0.05, 0.95, 0.9, 0.9, 200.0, 1.0, "b3"),),
        dr=(DRResource("dr", 30.0, 200.0, "b3"),),
        loads=(LoadPoint("load", "b3"),),
        lines=(
            TransmissionLine("l12", "b1", "b2", 0.1, 250.0),
            TransmissionLine("l13", "b1", "b3", 0.1, 250.0),
            TransmissionLine("l23", "b2", "b3", 0.1, 250.0),
        ),
        slack_bus="b1",
        cost_emergency=cost_emergency,
        dt=1.0,
    ))


def desk_history(n: int = 20, horizon: int = 168, seed: int = 0) -> ScenarioSet:
    """Diurnal wind/PV/load histories; peak net load occasionally exceeds firm capacity."""
    rng = np.random.default_rng(seed)
    t = np.arange(horizon)
    hour = t % 24
    day = 2 * np.pi * hour / 24
    pv = 100.0 * np.clip(np.sin(np.pi * (hour - 6) / 12), 0, None)[None] * rng.uniform(0.4, 1.0, (n, 1))
    level = rng.uniform(0.2, 0.7, (n, 1))
    wind = np.empty((n, horizon))
    w = level[:, 0] * 150.0
    for k in range(horizon):
        w = np.clip(0.9 * w + 0.1 * level[:, 0] * 150.0 + rng.normal(0, 12.0, n), 0, 150.0)
        wind[:, k] = w
    load = 250.0 + 80.0 * np.sin(day - 2.0)[None] + rng.normal(0, 12.0, (n, horizon))
    load = np.clip(load, 0, None)
    data = np.stack([wind, pv, load], axis=1)
    return ScenarioSet(("wind", "pv", "load"), (RE, RE, LD), data, np.array([150.0, 100.0, np.inf]))


def peak_system(e_init: float = 50.0) -> PowerSystem:
    """Single bus, one 100 MW unit and a 50 MW / 100 MWh lossless store."""
    return validate_system(PowerSystem(
        buses=("b1",),
        tpg=(TPGUnit("g1", 0.0, 100.0, 100.0, 100.0, 1, 1, 0.5, 0.0, 0.0, "b1"),),
        ses=(SESUnit("ses", 50.0, 100.0, 0.0, 1.0, 1.0, 1.0, e_init, 1.0, "b1"),),
        loads=(LoadPoint("load", "b1"),),
        slack_bus="b1",
    ))


def peak_scenarios(n: int = 10, horizon: int = 12, peak: int = 6, base: float = 100.0,
                   after: float = 50.0, excess=(0.0, 40.0)) -> ScenarioSet:
    """Load at thermal capacity until one peak, then low enough to recharge the store.

    The peak exceeds the thermal capacity by an amount spread evenly over
    ``excess`` across scenarios.
    """
    load = np.full((n, 1, horizon), base)
    load[:, 0, peak + 1:] = after
    load[:, 0, peak] = 100.0 + np.linspace(excess[0], excess[1], n)
    return ScenarioSet(("load",), (LD,), load)
