"""Multi-timescale Gaussian-copula scenario generation.

Long timescale: per-block energy totals of every series are modelled jointly
by one Gaussian copula over empirical marginals.  Short timescale: inside a
block each series is rebuilt period by period from a bivariate copula between
consecutive periods, then rescaled so the block total matches the sampled
aggregate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy import stats
from scipy.signal import lfilter

log = logging.getLogger(__name__)

RE, LD = "RE", "LD"
_U_EPS = 1e-12


class ScenarioError(ValueError):
    pass


@dataclass
class ScenarioSet:
    """``data[s, i, t]``: MW of series ``i`` at period ``t`` in scenario ``s``."""

    series: tuple[str, ...]
    kinds: tuple[str, ...]
    data: np.ndarray
    capacity: np.ndarray | None = None
    scenario_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 3 or self.data.shape[1] != len(self.series):
            raise ScenarioError("data must have shape (scenarios, series, periods)")
        if len(self.kinds) != len(self.series):
            raise ScenarioError("one kind per series required")
        if self.capacity is None:
            self.capacity = np.full(len(self.series), math.inf)
        self.capacity = np.asarray(self.capacity, dtype=float)
        if self.scenario_ids is None:
            self.scenario_ids = tuple(str(s) for s in range(self.data.shape[0]))

    @property
    def n_scenarios(self) -> int:
        return self.data.shape[0]

    @property
    def horizon(self) -> int:
        return self.data.shape[2]

    def index(self, series_id: str) -> int:
        return self.series.index(series_id)

    def validate(self, tol: float = 1e-9) -> "ScenarioSet":
        if np.any(self.data < -tol) or not np.all(np.isfinite(self.data)):
            raise ScenarioError("scenario values must be finite and nonnegative")
        over = self.data > self.capacity[None, :, None] * (1 + tol) + tol
        if over.any():
            s, i, t = np.argwhere(over)[0]
            raise ScenarioError(
                f"series {self.series[i]} exceeds capacity {self.capacity[i]} "
                f"in scenario {self.scenario_ids[s]} period {t}"
            )
        return self

    def mean(self) -> np.ndarray:
        return self.data.mean(axis=0)


@dataclass
class AggregatedScenarioSet:
    """``data[s, i, k]``: sum of series ``i`` over block ``k``."""

    series: tuple[str, ...]
    kinds: tuple[str, ...]
    block_len: int
    data: np.ndarray

    @property
    def blocks(self) -> int:
        return self.data.shape[2]


@dataclass
class EmpiricalMarginal:
    """Empirical CDF interpolating linearly between order statistics.

    Order statistic ``i`` (1-based, of ``n``) sits at plotting position
    ``(i - 0.5) / n``; tied values share the mean of their positions.
    """

    values: np.ndarray
    positions: np.ndarray = field(init=False, repr=False)
    _ux: np.ndarray = field(init=False, repr=False)
    _uu: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.values = np.sort(np.asarray(self.values, dtype=float).ravel())
        n = self.values.size
        self.positions = (np.arange(1, n + 1) - 0.5) / n
        ux, inv = np.unique(self.values, return_inverse=True)
        self._ux = ux
        self._uu = np.bincount(inv, weights=self.positions) / np.bincount(inv)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        u = np.interp(x, self._ux, self._uu)
        return np.where(x < self._ux[0], 0.0, np.where(x > self._ux[-1], 1.0, u))

    def ppf(self, u):
        return np.interp(np.asarray(u, dtype=float), self.positions, self.values)

    @property
    def degenerate(self) -> bool:
        return self._ux.size == 1


def fit_marginal(samples) -> EmpiricalMarginal:
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < 2:
        raise ScenarioError(f"fit_marginal needs at least 2 samples, got {samples.size}")
    return EmpiricalMarginal(samples)


@dataclass
class CopulaModel:
    correlation: np.ndarray
    marginals: list[EmpiricalMarginal] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    # layout of the aggregate copula: dimension index = series * blocks + block
    series: tuple[str, ...] | None = None
    kinds: tuple[str, ...] | None = None
    block_len: int | None = None

    @property
    def dimension(self) -> int:
        return self.correlation.shape[0]


def tau_to_rho(tau):
    return np.sin(np.pi * np.asarray(tau) / 2.0)


def repair_correlation(corr: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Clip eigenvalues at ``floor`` when ``corr`` is not PSD, then restore the unit diagonal."""
    corr = (corr + corr.T) / 2.0
    w, v = np.linalg.eigh(corr)
    if w.min() >= 0.0:
        return corr
    fixed = (v * np.maximum(w, floor)) @ v.T
    d = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(d, d)
    np.fill_diagonal(fixed, 1.0)
    return (fixed + fixed.T) / 2.0


def fit_copula(uniforms) -> CopulaModel:
    """Gaussian-copula correlation from pairwise Kendall's tau, ``rho = sin(pi tau / 2)``."""
    u = np.asarray(uniforms, dtype=float)
    if u.ndim != 2 or u.shape[0] < 3:
        raise ScenarioError("fit_copula needs a (samples >= 3, dimensions) matrix")
    d = u.shape[1]
    corr = np.eye(d)
    notes = []
    constant = [bool(np.all(u[:, j] == u[0, j])) for j in range(d)]
    for i in range(d):
        for j in range(i + 1, d):
            if constant[i] or constant[j]:
                notes.append(f"tau undefined for dimensions ({i}, {j}): constant column, rho set to 0")
                continue
            tau = stats.kendalltau(u[:, i], u[:, j]).statistic
            corr[i, j] = corr[j, i] = tau_to_rho(tau)
    for msg in notes[:5]:
        log.warning(msg)
    return CopulaModel(repair_correlation(corr), warnings=notes)


def _psd_cholesky(corr: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Lower factor ``L`` with ``L L^T = corr``; tolerates exactly singular PSD input."""
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        pass
    n = corr.shape[0]
    L = np.zeros_like(corr)
    for j in range(n):
        piv = corr[j, j] - L[j, :j] @ L[j, :j]
        if piv < -1e-8:
            raise ScenarioError("Cholesky failure: correlation matrix is not PSD")
        if piv <= tol:
            continue
        L[j, j] = math.sqrt(piv)
        L[j + 1:, j] = (corr[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def _stream(seed: int, stage: int, index: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stage, scenario index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stage, index])))


def aggregate_blocks(hist: ScenarioSet, block_len: int) -> AggregatedScenarioSet:
    T = hist.horizon
    if block_len < 1 or T % block_len:
        raise ScenarioError(f"block_len {block_len} does not divide horizon {T}")
    k = T // block_len
    agg = hist.data.reshape(hist.n_scenarios, len(hist.series), k, block_len).sum(axis=3)
    return AggregatedScenarioSet(hist.series, hist.kinds, block_len, agg)


def fit_aggregate_copula(agg: AggregatedScenarioSet) -> CopulaModel:
    n, ns, k = agg.data.shape
    flat = agg.data.reshape(n, ns * k)
    marginals = [EmpiricalMarginal(flat[:, d]) for d in range(flat.shape[1])]
    if n >= 3:
        uniforms = np.column_stack([m.cdf(flat[:, d]) for d, m in enumerate(marginals)])
        model = fit_copula(uniforms)
    else:
        model = CopulaModel(np.eye(ns * k), warnings=[f"only {n} historical scenarios: independence copula"])
    model.marginals = marginals
    model.series, model.kinds, model.block_len = agg.series, agg.kinds, agg.block_len
    return model


def sample_aggregate(model: CopulaModel, n: int, seed: int) -> AggregatedScenarioSet:
    L = _psd_cholesky(model.correlation)
    D = model.dimension
    out = np.empty((n, D))
    for s in range(n):
        z = L @ _stream(seed, 0, s).standard_normal(D)
        u = stats.norm.cdf(z)
        out[s] = [m.ppf(u[d]) for d, m in enumerate(model.marginals)]
    ns = len(model.series) if model.series else 1
    return AggregatedScenarioSet(model.series, model.kinds, model.block_len, out.reshape(n, ns, D // ns))


def scale_block(raw: np.ndarray, target: float, cap: float = math.inf) -> np.ndarray:
    """Rescale one block to sum to ``target`` and cap values without changing the sum when possible."""
    raw = np.asarray(raw, dtype=float)
    total = raw.sum()
    if target <= 0.0:
        return np.zeros_like(raw)
    if total > 0.0:
        out = target * (raw / total)
    else:
        out = np.full(raw.shape, target / raw.size)
    if not math.isfinite(cap):
        return out
    if target >= cap * raw.size:
        return np.full(raw.shape, cap)
    for _ in range(raw.size):
        over = out > cap
        if not over.any():
            break
        excess = float((out[over] - cap).sum())
        out[over] = cap
        free = out < cap
        weights = out[free]
        if weights.sum() > 0:
            out[free] += excess * weights / weights.sum()
        else:
            out[free] += excess / free.sum()
    return np.minimum(out, cap)


@dataclass
class _IntraBlockModel:
    first: list[list[EmpiricalMarginal]]
    pooled: list[list[EmpiricalMarginal]]
    rho: np.ndarray  # (series, blocks)


def fit_intra_block(hist: ScenarioSet, block_len: int) -> _IntraBlockModel:
    n, ns, T = hist.data.shape
    k = T // block_len
    blocks = hist.data.reshape(n, ns, k, block_len)
    first, pooled = [], []
    rho = np.zeros((ns, k))
    for i in range(ns):
        first.append([EmpiricalMarginal(blocks[:, i, b, 0]) for b in range(k)])
        pooled.append([EmpiricalMarginal(blocks[:, i, b, :]) for b in range(k)])
        for b in range(k):
            x = blocks[:, i, b, :-1].ravel()
            y = blocks[:, i, b, 1:].ravel()
            if x.size >= 3 and np.ptp(x) > 0 and np.ptp(y) > 0:
                rho[i, b] = tau_to_rho(stats.kendalltau(x, y).statistic)
    return _IntraBlockModel(first, pooled, rho)


def _sample_one(model: _IntraBlockModel, target: np.ndarray, cap: np.ndarray,
                block_len: int, rng: np.random.Generator) -> np.ndarray:
    ns, k = target.shape
    u0 = rng.random((ns, k))
    eps = rng.standard_normal((ns, k, max(block_len - 1, 0)))
    out = np.empty((ns, k * block_len))
    for i in range(ns):
        for b in range(k):
            g = model.pooled[i][b]
            v0 = model.first[i][b].ppf(u0[i, b])
            z0 = stats.norm.ppf(np.clip(g.cdf(v0), _U_EPS, 1 - _U_EPS))
            r = model.rho[i, b]
            drive = np.concatenate([[z0], math.sqrt(max(1.0 - r * r, 0.0)) * eps[i, b]])
            z = lfilter([1.0], [1.0, -r], drive)
            raw = g.ppf(stats.norm.cdf(z))
            raw[0] = v0
            out[i, b * block_len:(b + 1) * block_len] = scale_block(raw, target[i, b], cap[i])
    return out


def sample_intra_block(hist: ScenarioSet, aggregate: AggregatedScenarioSet, seed: int,
                       model: _IntraBlockModel | None = None) -> ScenarioSet:
    A = aggregate.block_len
    if hist.horizon != A * aggregate.blocks or aggregate.series != hist.series:
        raise ScenarioError("aggregate blocks inconsistent with the historical block structure")
    model = model or fit_intra_block(hist, A)
    n = aggregate.data.shape[0]
    data = np.empty((n, len(hist.series), hist.horizon))
    for s in range(n):
        data[s] = _sample_one(model, aggregate.data[s], hist.capacity, A, _stream(seed, 1, s))
    return ScenarioSet(hist.series, hist.kinds, data, hist.capacity.copy())


def generate_representative(hist: ScenarioSet, n_rep: int, block_len: int, seed: int) -> ScenarioSet:
    """Generate ``n_rep`` long-horizon scenarios from the historical set."""
    if hist.n_scenarios < 1:
        raise ScenarioError("historical set is empty")
    agg = aggregate_blocks(hist, block_len)
    copula = fit_aggregate_copula(agg)
    intra = fit_intra_block(hist, block_len)
    target = sample_aggregate(copula, n_rep, seed)
    return sample_intra_block(hist, target, seed, intra)
