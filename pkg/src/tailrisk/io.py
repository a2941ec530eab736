"""Configuration, CSV ingestion/persistence and run manifests."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .dispatch import EvolutionParams, EvolutionTrace, SocReference
from .scenarios import LD, RE, ScenarioSet
from .system import (DRResource, LoadPoint, PowerSystem, RESource, SESUnit, TPGUnit, TransmissionLine,
                     validate_system)

SCENARIO_COLUMNS = ("scenario_id", "series_id", "period", "value_mw")


class ConfigError(ValueError):
    pass


def fmt(v) -> str:
    """Round-trip text for CSV cells."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path: Path, required) -> list[dict]:
    """Rows as dicts; ``required`` columns must all appear in the header."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: file not found")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not set(required) <= {h.strip() for h in header}:
            raise ConfigError(f"{path}: missing or invalid header, expected columns {', '.join(required)}")
        header = [h.strip() for h in header]
        rows = []
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ConfigError(f"{path}:{line}: expected {len(header)} fields, got {len(rec)}")
            row = dict(zip(header, (c.strip() for c in rec)))
            row["_line"] = line
            rows.append(row)
    return rows


def git_blob_sha1(path: Path) -> str:
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


# ----------------------------------------------------------------------------- system

_TYPES = {"tpg": TPGUnit, "re": RESource, "ses": SESUnit, "dr": DRResource, "loads": LoadPoint,
          "lines": TransmissionLine}
_SCALARS = {"buses", "slack_bus", "cost_emergency", "dt", *_TYPES}


def _build(cls, doc: dict, where: str):
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"{where}: unknown fields {sorted(unknown)}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def system_from_dict(doc: dict) -> PowerSystem:
    unknown = set(doc) - _SCALARS
    if unknown:
        raise ConfigError(f"system: unknown keys {sorted(unknown)}")
    parts = {}
    for key, cls in _TYPES.items():
        parts[key] = tuple(_build(cls, item, f"system.{key}[{i}]") for i, item in enumerate(doc.get(key, ())))
    sys = PowerSystem(
        buses=tuple(doc.get("buses", ())),
        slack_bus=doc.get("slack_bus"),
        cost_emergency=float(doc.get("cost_emergency", 1000.0)),
        dt=float(doc.get("dt", 1.0)),
        **parts,
    )
    return validate_system(sys)


def system_to_dict(sys: PowerSystem) -> dict:
    out = {"buses": list(sys.buses), "slack_bus": sys.slack_bus, "cost_emergency": sys.cost_emergency,
           "dt": sys.dt}
    for key in _TYPES:
        out[key] = [{f.name: getattr(item, f.name) for f in fields(item)} for item in getattr(sys, key)]
    return out


def load_system(path: Path) -> PowerSystem:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return system_from_dict(doc)


# -------------------------------------------------------------------------- scenarios

def read_scenarios(path: Path, sys: PowerSystem) -> ScenarioSet:
    """Long-format scenario CSV; series kinds and capacities come from ``sys``."""
    rows = read_csv(path, SCENARIO_COLUMNS)
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    kinds = {r.id: (RE, r.capacity) for r in sys.re}
    kinds.update({d.id: (LD, math.inf) for d in sys.loads})
    scen_ids, series_ids, cells = {}, {}, {}
    for row in rows:
        line = row["_line"]
        sid, ser = row["scenario_id"], row["series_id"]
        if ser not in kinds:
            raise ConfigError(f"{path}:{line}: series {ser!r} is neither an RE source nor a load of the system")
        try:
            period = int(row["period"])
            value = float(row["value_mw"])
        except ValueError as exc:
            raise ConfigError(f"{path}:{line}: malformed number ({exc})") from exc
        if period < 0 or not math.isfinite(value):
            raise ConfigError(f"{path}:{line}: negative period or non-finite value")
        scen_ids.setdefault(sid, len(scen_ids))
        series_ids.setdefault(ser, len(series_ids))
        key = (sid, ser, period)
        if key in cells:
            raise ConfigError(f"{path}:{line}: duplicate entry for {key}")
        cells[key] = value
    T = 1 + max(k[2] for k in cells)
    order = [s.id for s in sys.re if s.id in series_ids] + [d.id for d in sys.loads if d.id in series_ids]
    data = np.full((len(scen_ids), len(order), T), np.nan)
    si = {s: i for i, s in enumerate(order)}
    for (sid, ser, period), value in cells.items():
        data[scen_ids[sid], si[ser], period] = value
    if np.isnan(data).any():
        s, i, t = np.argwhere(np.isnan(data))[0]
        raise ConfigError(f"{path}: missing value for scenario {list(scen_ids)[s]}, series {order[i]}, period {t}")
    scen = ScenarioSet(tuple(order), tuple(kinds[s][0] for s in order), data,
                       np.array([kinds[s][1] for s in order]), tuple(scen_ids))
    scen.validate()
    return scen


def write_scenarios(path: Path, scen: ScenarioSet) -> None:
    def rows():
        for s, sid in enumerate(scen.scenario_ids):
            for i, ser in enumerate(scen.series):
                for t in range(scen.horizon):
                    yield sid, ser, t, float(scen.data[s, i, t])
    write_csv(path, SCENARIO_COLUMNS, rows())


# ----------------------------------------------------------------------------- traces

def write_traces(path: Path, sys: PowerSystem, traces: list[EvolutionTrace], scenario_ids) -> None:
    header = ["scenario_id", "period", "eme_cost", "shortage", "op_cost", "penalty"]
    header += [f"soc_{u.id}" for u in sys.ses] + [f"ch_{u.id}" for u in sys.ses] + [f"dc_{u.id}" for u in sys.ses]
    header += [f"on_{u.id}" for u in sys.tpg] + [f"p_{u.id}" for u in sys.tpg]
    header += [f"dr_{u.id}" for u in sys.dr] + [f"re_{u.id}" for u in sys.re] + [f"curt_{u.id}" for u in sys.re]

    def rows():
        for tr in traces:
            for t in range(tr.horizon):
                yield [scenario_ids[tr.scenario], t, tr.eme_cost[t], tr.shortage[t], tr.op_cost[t], tr.penalty[t],
                       *tr.soc[:, t], *tr.charge[:, t], *tr.discharge[:, t], *tr.on[:, t].astype(int),
                       *tr.power[:, t], *tr.dr[:, t], *tr.re_used[:, t], *tr.curtailment[:, t]]
    write_csv(path, header, rows())


def write_reference(path: Path, sys: PowerSystem, ref: SocReference) -> None:
    write_csv(path, ["period"] + [f"soc_ref_{u.id}" for u in sys.ses],
              ([t, *ref.values[:, t]] for t in range(ref.horizon)))


def read_reference(path: Path, sys: PowerSystem) -> SocReference:
    cols = [f"soc_ref_{u.id}" for u in sys.ses]
    rows = read_csv(path, ["period", *cols])
    return SocReference(np.array([[float(r[c]) for r in rows] for c in cols]).reshape(len(cols), -1))


def read_thresholds(path: Path) -> np.ndarray:
    rows = read_csv(path, ["period", "threshold"])
    try:
        vals = {int(r["period"]): float(r["threshold"]) for r in rows}
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed threshold row ({exc})") from exc
    if sorted(vals) != list(range(len(vals))):
        raise ConfigError(f"{path}: periods must be 0..n-1 without gaps")
    return np.array([vals[t] for t in range(len(vals))])


# ----------------------------------------------------------------------------- config

@dataclass
class RunConfig:
    base: Path
    system: Path
    output: Path
    history: Path | None = None
    scenarios: Path | None = None
    n_rep: int = 200
    block_len: int = 365
    horizon: int | None = None  # expected history length, checked when given
    seed: int = 0
    alpha: float = 0.8
    threshold: float = 2e5
    threshold_file: Path | None = None
    lookahead: int = 4
    omega_rt: float = 10.0
    gap_tol: float = 1e-6
    eta0: float | None = None
    max_iter: int = 20
    jobs: int = 1
    raw: dict = field(default_factory=dict)

    @property
    def evolution(self) -> EvolutionParams:
        return EvolutionParams(self.lookahead, self.omega_rt, self.gap_tol)

    @property
    def blocks(self) -> int | None:
        return None if self.horizon is None else self.horizon // self.block_len

    @property
    def scenario_path(self) -> Path:
        return self.scenarios or self.output / "scenarios.csv"

    def thresholds(self, horizon: int):
        if self.threshold_file is None:
            return np.full(horizon, self.threshold)
        thr = read_thresholds(self.threshold_file)
        if thr.size != horizon:
            raise ConfigError(f"{self.threshold_file}: {thr.size} thresholds for a horizon of {horizon}")
        return thr


_SECTIONS = {
    "scenario_generation": {"n_rep", "block_len", "horizon", "seed"},
    "risk": {"alpha", "threshold", "threshold_file"},
    "dispatch": {"lookahead", "omega_rt", "gap_tol"},
    "mitigation": {"eta0", "max_iter"},
}
_TOP = {"system", "history", "scenarios", "output", "jobs", *_SECTIONS}


def load_config(path: Path, seed=None, jobs=None, out=None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: config file not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(raw) - _TOP
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    base = path.resolve().parent

    def p(v):
        return None if v is None else (base / v).resolve()

    if "system" not in raw:
        raise ConfigError(f"{path}: 'system' is required")
    flat = {}
    for sec, keys in _SECTIONS.items():
        body = raw.get(sec, {})
        bad = set(body) - keys
        if bad:
            raise ConfigError(f"{path}: unknown keys in {sec}: {sorted(bad)}")
        flat.update(body)
    cfg = RunConfig(
        base=base,
        system=p(raw["system"]),
        output=Path(out).resolve() if out is not None else p(raw.get("output", "out")),
        history=p(raw.get("history")),
        scenarios=p(raw.get("scenarios")),
        threshold_file=p(flat.pop("threshold_file", None)),
        jobs=int(raw.get("jobs", 1)),
        raw=raw,
        **flat,
    )
    if seed is not None:
        cfg.seed = int(seed)
    if jobs is not None:
        cfg.jobs = int(jobs)
    if not 0 < cfg.alpha < 1:
        raise ConfigError(f"{path}: risk.alpha must lie in (0, 1)")
    if cfg.lookahead < 0 or cfg.n_rep < 1 or cfg.block_len < 1 or cfg.max_iter < 0 or cfg.jobs < 1:
        raise ConfigError(f"{path}: lookahead, n_rep, block_len, max_iter and jobs must be positive")
    if cfg.horizon is not None and cfg.horizon % cfg.block_len:
        raise ConfigError(f"{path}: horizon {cfg.horizon} is not a multiple of block_len {cfg.block_len}")
    return cfg


def write_manifest(path: Path, command: str, cfg: RunConfig, inputs: list[Path], extra: dict | None = None) -> dict:
    man = {
        "tool": "tailrisk",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": cfg.raw,
        "inputs": {str(p): git_blob_sha1(p) for p in inputs if p is not None and Path(p).is_file()},
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        man.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return man
