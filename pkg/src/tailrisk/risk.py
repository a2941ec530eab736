"""Per-period CVaR of emergency cost, subgradients and the reference-mitigation loop."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from typing import Callable, Sequence

import numpy as np

from .dispatch import EvolutionParams, EvolutionTrace, SocReference, evolve_all
from .scenarios import ScenarioSet
from .system import PowerSystem, ShiftFactorMatrix

log = logging.getLogger(__name__)

ETA_MIN_FACTOR = 64


class RiskError(ValueError):
    pass


def _count(x: float) -> int:
    """``ceil(x)`` that ignores float noise just above an integer."""
    r = round(x)
    return int(r) if abs(x - r) <= 1e-9 * max(1.0, abs(x)) else math.ceil(x)


def tail_size(n: int, alpha: float) -> int:
    return max(1, _count((1.0 - alpha) * n))


def _check_losses(losses, alpha):
    losses = np.asarray(losses, dtype=float).ravel()
    if losses.size == 0:
        raise RiskError("loss list is empty")
    if not 0.0 < alpha < 1.0:
        raise RiskError(f"alpha must lie in (0, 1), got {alpha}")
    return losses


def compute_var(losses, alpha: float) -> float:
    """The ``ceil(alpha N)``-th smallest loss (1-based)."""
    losses = _check_losses(losses, alpha)
    k = min(max(1, _count(alpha * losses.size)), losses.size)
    return float(np.partition(losses, k - 1)[k - 1])


def compute_cvar(losses, alpha: float):
    """Return ``(VaR, CVaR, tail)``; ``tail`` holds the indices of the ``ceil((1-alpha)N)`` worst losses.

    CVaR is VaR plus the summed excess over VaR divided by the tail size.
    """
    losses = _check_losses(losses, alpha)
    var = compute_var(losses, alpha)
    k = tail_size(losses.size, alpha)
    cvar = var + float(np.maximum(losses - var, 0.0).sum()) / k
    cand = np.flatnonzero(losses >= var)
    # largest first, ties to the lower index
    order = np.lexsort((cand, -losses[cand]))
    tail = np.sort(cand[order[:k]])
    return var, cvar, tail


@dataclass
class RiskProfile:
    alpha: float
    var: np.ndarray
    cvar: np.ndarray
    thresholds: np.ndarray
    tails: list[np.ndarray]
    scenarios: np.ndarray  # scenario id of each loss column

    @property
    def flags(self) -> np.ndarray:
        return self.cvar > self.thresholds

    @property
    def flagged(self) -> np.ndarray:
        return np.flatnonzero(self.flags)

    @property
    def horizon(self) -> int:
        return self.var.size

    @property
    def max_cvar(self) -> float:
        return float(self.cvar.max(initial=-math.inf))


def loss_matrix(traces: Sequence[EvolutionTrace]) -> np.ndarray:
    return np.vstack([tr.eme_cost for tr in traces])


def assess(traces: Sequence[EvolutionTrace], alpha: float, thresholds) -> RiskProfile:
    if len(traces) < 2:
        raise RiskError("assessment needs at least 2 traces")
    losses = loss_matrix(traces)
    T = losses.shape[1]
    thr = np.asarray(thresholds, dtype=float)
    if thr.ndim == 0:
        thr = np.full(T, float(thr))
    if thr.shape != (T,):
        raise RiskError(f"threshold series has length {thr.size}, horizon is {T}")
    var, cvar, tails = np.empty(T), np.empty(T), []
    for t in range(T):
        var[t], cvar[t], tail = compute_cvar(losses[:, t], alpha)
        tails.append(tail)
    return RiskProfile(alpha, var, cvar, thr, tails, np.array([tr.scenario for tr in traces]))


@dataclass
class SubgradientField:
    per_scenario: np.ndarray  # G[e, s, t], all periods
    mean: np.ndarray  # G-bar[e, t], zero at unflagged periods

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.mean).max(initial=0.0))


def compute_subgradients(traces: Sequence[EvolutionTrace], ref: SocReference, omega_rt: float,
                         profile: RiskProfile) -> SubgradientField:
    """``G = -2 omega (E~ - E^)`` per scenario; tail average with denominator ``ceil((1-alpha)N)``."""
    soc = np.stack([tr.soc for tr in traces], axis=1)  # (e, s, t)
    G = -2.0 * omega_rt * (soc - ref.values[:, None, :])
    mean = np.zeros_like(ref.values, dtype=float)
    k = tail_size(len(traces), profile.alpha)
    for t in profile.flagged:
        mean[:, t] = G[:, profile.tails[t], t].sum(axis=1) / k
    return SubgradientField(G, mean)


def check_descent_condition(profile: RiskProfile, field: SubgradientField, shift) -> np.ndarray:
    """Linearised change ``sum_e G-bar[e, t] * shift[e, t]`` at flagged periods (0 elsewhere)."""
    shift = np.asarray(shift, dtype=float).reshape(field.mean.shape)
    bound = np.zeros(profile.horizon)
    f = profile.flagged
    bound[f] = (field.mean[:, f] * shift[:, f]).sum(axis=0)
    return bound


def project_reference(sys: PowerSystem, values: np.ndarray) -> np.ndarray:
    """Clip to SoC bounds, then restore per-period reachability from the initial SoC.

    Forward, backward, forward passes; the last pass anchors the sequence at E_INT.
    """
    out = np.array(values, dtype=float, copy=True)
    for e, u in enumerate(sys.ses):
        v = np.clip(out[e], u.soc_min, u.soc_max)
        rise, fall = u.max_rise(sys.dt), u.max_fall(sys.dt)

        def forward(v):
            prev = u.e_init
            for t in range(v.size):
                v[t] = min(max(v[t], prev - fall), prev + rise)
                prev = v[t]

        forward(v)
        for t in range(v.size - 2, -1, -1):
            v[t] = min(max(v[t], v[t + 1] - rise), v[t + 1] + fall)
        forward(v)
        out[e] = np.clip(v, u.soc_min, u.soc_max)
    return out


@dataclass
class MitigationParams:
    alpha: float = 0.8
    thresholds: object = 2e5
    eta0: float | None = None
    max_iter: int = 20
    evolution: EvolutionParams = field(default_factory=EvolutionParams)
    jobs: int = 1


@dataclass
class IterationRecord:
    iteration: int
    eta: float
    accepted: bool
    flagged: int
    max_cvar: float
    reference: np.ndarray


@dataclass
class MitigationReport:
    reason: str
    iterations: int
    records: list[IterationRecord]
    reference: SocReference
    profile: RiskProfile
    initial_profile: RiskProfile
    eta0: float = math.nan

    @property
    def accepted_max_cvar(self) -> list[float]:
        return [self.initial_profile.max_cvar] + [r.max_cvar for r in self.records if r.accepted]


def mitigate(sys: PowerSystem, sf: ShiftFactorMatrix, rep: ScenarioSet, ref: SocReference,
             params: MitigationParams,
             evaluate: Callable[[SocReference], tuple[list, RiskProfile]] | None = None,
             initial: tuple[list, RiskProfile] | None = None,
             log_iteration: Callable[[IterationRecord], None] | None = None) -> MitigationReport:
    """Shift the reference against the averaged subgradient until no period is flagged.

    A candidate is kept only if it lowers the worst per-period CVaR;
    otherwise the step is halved, and the run stalls once it would fall
    below ``eta0 / 64``.
    """
    omega = params.evolution.omega_rt

    def default_evaluate(r):
        traces = evolve_all(sys, sf, rep, r, params.evolution, params.jobs).ordered
        return traces, assess(traces, params.alpha, params.thresholds)

    evaluate = evaluate or default_evaluate
    traces, profile = initial if initial is not None else evaluate(ref)
    first = profile
    records: list[IterationRecord] = []

    def report(reason, eta0=math.nan):
        return MitigationReport(reason, len(records), records, ref, profile, first, eta0)

    if not profile.flags.any():
        return report("cleared")
    grad = compute_subgradients(traces, ref, omega, profile)
    if grad.max_abs == 0.0:
        log.info("averaged subgradient vanishes at every flagged period")
        return report("stalled")
    if params.eta0 is not None:
        eta0 = params.eta0
    else:
        eta0 = min(u.e_cap for u in sys.ses) / (10.0 * grad.max_abs)
    eta = eta0
    for it in range(1, params.max_iter + 1):
        cand = project_reference(sys, ref.values - eta * grad.mean)
        if np.array_equal(cand, ref.values):
            new_traces, new_profile = traces, profile
        else:
            new_traces, new_profile = evaluate(SocReference(cand))
        accepted = new_profile.max_cvar < profile.max_cvar
        rec = IterationRecord(it, eta, accepted, int(new_profile.flags.sum()), new_profile.max_cvar, cand)
        records.append(rec)
        if log_iteration:
            log_iteration(rec)
        if accepted:
            ref, traces, profile = SocReference(cand), new_traces, new_profile
            if not profile.flags.any():
                return report("cleared", eta0)
            grad = compute_subgradients(traces, ref, omega, profile)
            if grad.max_abs == 0.0:
                return report("stalled", eta0)
        else:
            eta /= 2.0
            if eta < eta0 / ETA_MIN_FACTOR:
                return report("stalled", eta0)
    return report("max-iter", eta0)
