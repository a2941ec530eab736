"""``tailrisk`` command line: generate-scenarios, assess, mitigate, report."""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
import sys as _sys

import numpy as np

from .dispatch import EvolutionError, build_longterm_reference, evolve_all
from .io import (ConfigError, RunConfig, load_config, load_system, read_csv, read_scenarios, write_csv,
                 write_manifest, write_reference, write_scenarios, write_traces)
from .risk import MitigationParams, RiskError, assess, compute_subgradients, mitigate, tail_size
from .scenarios import ScenarioError, generate_representative
from .system import SystemValidationError, compute_shift_factors

log = logging.getLogger("tailrisk")

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_STALLED = 0, 1, 2, 3


def g6(v) -> str:
    return f"{float(v):.6g}"


def _inputs(cfg: RunConfig, sys):
    rep = read_scenarios(cfg.scenario_path, sys)
    return rep, cfg.thresholds(rep.horizon)


def _write_profile(path: Path, profile, suffix=""):
    write_csv(path / f"risk_profile{suffix}.csv", ["period", "var", "cvar", "threshold", "flag", "tail_size"],
              ([t, profile.var[t], profile.cvar[t], profile.thresholds[t], bool(profile.flags[t]), len(profile.tails[t])]
               for t in range(profile.horizon)))
    write_csv(path / f"cvar{suffix}.csv", ["period", "cvar"], ([t, profile.cvar[t]] for t in range(profile.horizon)))


def cmd_generate_scenarios(cfg: RunConfig) -> int:
    sys = load_system(cfg.system)
    if cfg.history is None:
        raise ConfigError("config: 'history' is required for generate-scenarios")
    hist = read_scenarios(cfg.history, sys)
    if cfg.horizon is not None and hist.horizon != cfg.horizon:
        raise ConfigError(f"{cfg.history}: history spans {hist.horizon} periods, config expects {cfg.horizon}")
    rep = generate_representative(hist, cfg.n_rep, cfg.block_len, cfg.seed)
    path = cfg.output / "scenarios.csv"
    write_scenarios(path, rep)
    write_manifest(cfg.output / "scenarios_manifest.json", "generate-scenarios", cfg, [cfg.system, cfg.history],
                   {"n_rep": cfg.n_rep, "block_len": cfg.block_len, "blocks": rep.horizon // cfg.block_len,
                    "horizon": rep.horizon})
    print(f"wrote {rep.n_scenarios} scenarios x {rep.horizon} periods to {path}")
    for name, data in (("historical", hist), ("representative", rep)):
        for i, ser in enumerate(data.series):
            v = data.data[:, i, :]
            print(f"  {name:14s} {ser:12s} mean {g6(v.mean())} min {g6(v.min())} max {g6(v.max())}")
        re = np.array([k == "RE" for k in data.kinds])
        net = data.data[:, ~re, :].sum(axis=1) - data.data[:, re, :].sum(axis=1)
        print(f"  {name:14s} net load     min {g6(net.min())} max {g6(net.max())}")
    return EXIT_OK


def cmd_assess(cfg: RunConfig) -> int:
    sys = load_system(cfg.system)
    sf = compute_shift_factors(sys)
    rep, thr = _inputs(cfg, sys)
    ref = build_longterm_reference(sys, sf, rep)
    batch = evolve_all(sys, sf, rep, ref, cfg.evolution, cfg.jobs)
    traces = batch.ordered
    profile = assess(traces, cfg.alpha, thr)
    grad = compute_subgradients(traces, ref, cfg.omega_rt, profile)
    out = cfg.output
    write_traces(out / "traces.csv", sys, traces, rep.scenario_ids)
    write_reference(out / "soc_reference.csv", sys, ref)
    _write_profile(out, profile)
    write_csv(out / "subgradients.csv", ["period", "ses_id", "mean_subgradient"],
              ([t, u.id, grad.mean[e, t]] for t in profile.flagged for e, u in enumerate(sys.ses)))
    write_manifest(out / "assess_manifest.json", "assess", cfg,
                   [cfg.system, cfg.scenario_path, cfg.threshold_file],
                   {"alpha": cfg.alpha, "scenarios": rep.n_scenarios, "completed": len(traces),
                    "failures": {rep.scenario_ids[k]: v for k, v in batch.failures.items()},
                    "tail_size": tail_size(len(traces), cfg.alpha), "flagged": int(profile.flags.sum()),
                    "max_cvar": profile.max_cvar})
    print(f"assessed {len(traces)} of {rep.n_scenarios} scenarios over {rep.horizon} periods")
    print(f"  flagged periods {int(profile.flags.sum())}  max CVaR {g6(profile.max_cvar)}  "
          f"total emergency cost (mean) {g6(np.mean([tr.eme_cost.sum() for tr in traces]))}")
    return EXIT_OK


def cmd_mitigate(cfg: RunConfig) -> int:
    sys = load_system(cfg.system)
    sf = compute_shift_factors(sys)
    rep, thr = _inputs(cfg, sys)
    ref = build_longterm_reference(sys, sf, rep)
    params = MitigationParams(cfg.alpha, thr, cfg.eta0, cfg.max_iter, cfg.evolution, cfg.jobs)

    def show(rec):
        print(f"  iter {rec.iteration}: eta {g6(rec.eta)} {'accepted' if rec.accepted else 'rejected'} "
              f"flagged {rec.flagged} max CVaR {g6(rec.max_cvar)}")

    report = mitigate(sys, sf, rep, ref, params, log_iteration=show)
    out = cfg.output
    write_csv(out / "mitigation_report.csv", ["iteration", "eta", "accepted", "flagged", "max_cvar"],
              [[0, 0.0, True, int(report.initial_profile.flags.sum()), report.initial_profile.max_cvar]] +
               [[r.iteration, r.eta, r.accepted, r.flagged, r.max_cvar] for r in report.records])
    history = [(0, ref.values)] + [(r.iteration, r.reference) for r in report.records]
    write_csv(out / "mitigation_references.csv", ["iteration", "ses_id", "period", "soc_ref"],
              ([i, u.id, t, vals[e, t]] for i, vals in history for e, u in enumerate(sys.ses)
               for t in range(ref.horizon)))
    write_reference(out / "soc_reference_mitigated.csv", sys, report.reference)
    _write_profile(out, report.profile, "_mitigated")
    write_manifest(out / "mitigate_manifest.json", "mitigate", cfg,
                   [cfg.system, cfg.scenario_path, cfg.threshold_file],
                   {"reason": report.reason, "iterations": report.iterations, "eta0": report.eta0,
                    "max_cvar": [r.max_cvar for r in report.records],
                    "initial_max_cvar": report.initial_profile.max_cvar,
                    "flagged": int(report.profile.flags.sum())})
    print(f"mitigation {report.reason} after {report.iterations} iterations; "
          f"max CVaR {g6(report.initial_profile.max_cvar)} -> {g6(report.profile.max_cvar)}")
    return EXIT_OK if report.reason == "cleared" else EXIT_STALLED


def cmd_report(cfg: RunConfig) -> int:
    out = cfg.output
    manifests = {}
    for name in ("scenarios", "assess", "mitigate"):
        p = out / f"{name}_manifest.json"
        if p.is_file():
            manifests[name] = json.loads(p.read_text(encoding="utf-8"))
    if "assess" not in manifests and "mitigate" not in manifests:
        raise ConfigError(f"{out}: missing artifact assess_manifest.json (run 'assess' or 'mitigate' first)")
    lines = ["tailrisk run summary", ""]
    if "scenarios" in manifests:
        m = manifests["scenarios"]
        lines.append(f"scenarios: {m['n_rep']} x {m['horizon']} periods, block length {m['block_len']}, seed {m['seed']}")
    if "assess" in manifests:
        m = manifests["assess"]
        lines.append(f"assessment: alpha {m['alpha']}, {m['completed']} of {m['scenarios']} scenarios, "
                     f"tail size {m['tail_size']}")
        lines.append(f"flagged periods: {m['flagged']}")
        lines.append(f"max CVaR: {g6(m['max_cvar'])}")
    if "mitigate" in manifests:
        m = manifests["mitigate"]
        lines.append(f"mitigation: {m['reason']} after {m['iterations']} iterations")
        lines.append(f"  iteration 0 max CVaR {g6(m['initial_max_cvar'])}")
        for i, v in enumerate(m["max_cvar"], start=1):
            lines.append(f"  iteration {i} max CVaR {g6(v)}")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text, encoding="utf-8")

    rows = []
    for fname, cols in (("risk_profile.csv", ("var", "cvar", "threshold", "flag")),
                        ("risk_profile_mitigated.csv", ("var", "cvar", "flag"))):
        p = out / fname
        if p.is_file():
            tag = fname[:-4]
            for r in read_csv(p, ["period", *cols]):
                rows.extend([tag + "." + c, r["period"], r[c]] for c in cols)
    for fname in ("soc_reference.csv", "soc_reference_mitigated.csv"):
        p = out / fname
        if p.is_file():
            for r in read_csv(p, ["period"]):
                rows.extend([f"{fname[:-4]}.{k[8:]}", r["period"], v] for k, v in r.items()
                            if k.startswith("soc_ref_"))
    p = out / "subgradients.csv"
    if p.is_file():
        for r in read_csv(p, ["period", "ses_id", "mean_subgradient"]):
            rows.append([f"subgradient.{r['ses_id']}", r["period"], r["mean_subgradient"]])
    write_csv(out / "report_long.csv", ["series", "period", "value"], rows)
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "generate-scenarios": cmd_generate_scenarios,
    "assess": cmd_assess,
    "mitigate": cmd_mitigate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tailrisk", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override scenario_generation.seed")
        p.add_argument("--jobs", type=int, help="worker processes for scenario evolution")
        p.add_argument("--out", type=Path, help="override the output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.jobs, args.out)
        return COMMANDS[args.command](cfg)
    except (ConfigError, SystemValidationError, ScenarioError, RiskError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_VALIDATION
    except EvolutionError as exc:
        print(f"solver error: {exc}", file=_sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    _sys.exit(main())
