import json
import time

import numpy as np
import pytest

from tailrisk.cli import main
from tailrisk.fixtures import desk_history, desk_system, peak_scenarios, peak_system
from tailrisk.io import read_csv, system_to_dict, write_csv, write_scenarios


def make_config(tmp_path, system, scenarios=None, history=None, **sections):
    (tmp_path / "system.json").write_text(json.dumps(system_to_dict(system)))
    cfg = {"system": "system.json", "output": "out"}
    if scenarios is not None:
        write_scenarios(tmp_path / "scenarios.csv", scenarios)
        cfg["scenarios"] = "scenarios.csv"
    if history is not None:
        write_scenarios(tmp_path / "history.csv", history)
        cfg["history"] = "history.csv"
    cfg.update(sections)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def run(cmd, cfg, *extra):
    return main([cmd, "--config", str(cfg), *extra])


@pytest.fixture
def gen_cfg(tmp_path):
    return make_config(tmp_path, desk_system(), history=desk_history(6, 48, seed=1),
                       scenario_generation={"n_rep": 4, "block_len": 24, "seed": 5})


# ------------------------------------------------------- generate-scenarios

def test_generate_happy_path(gen_cfg, capsys):
    assert run("generate-scenarios", gen_cfg) == 0
    out = gen_cfg.parent / "out"
    man = json.loads((out / "scenarios_manifest.json").read_text())
    assert man["seed"] == 5 and man["version"] and man["inputs"]
    assert "net load" in capsys.readouterr().out
    assert len(read_csv(out / "scenarios.csv", ["scenario_id"])) == 4 * 3 * 48


def test_generate_is_byte_identical_and_seed_override(gen_cfg):
    out = gen_cfg.parent / "out" / "scenarios.csv"
    run("generate-scenarios", gen_cfg)
    first = out.read_bytes()
    run("generate-scenarios", gen_cfg)
    assert out.read_bytes() == first
    assert b"\r\n" not in first
    run("generate-scenarios", gen_cfg, "--seed", "6")
    assert out.read_bytes() != first


def test_missing_header(tmp_path, capsys):
    cfg = make_config(tmp_path, desk_system())
    (tmp_path / "history.csv").write_text("a,b,c\n1,2,3\n")
    raw = json.loads(cfg.read_text())
    raw["history"] = "history.csv"
    cfg.write_text(json.dumps(raw))
    assert run("generate-scenarios", cfg) == 1
    assert "history.csv" in capsys.readouterr().err


def test_malformed_row_reports_line(tmp_path, capsys):
    cfg = make_config(tmp_path, desk_system(), history=desk_history(3, 24))
    with open(tmp_path / "history.csv", "a") as fh:
        fh.write("0,load,99,not-a-number\n")
    assert run("generate-scenarios", cfg) == 1
    err = capsys.readouterr().err
    assert "history.csv:" in err and str(3 * 3 * 24 + 2) in err


def test_non_divisible_horizon(tmp_path, capsys):
    cfg = make_config(tmp_path, desk_system(), history=desk_history(3, 30),
                      scenario_generation={"block_len": 24})
    assert run("generate-scenarios", cfg) == 1
    assert "does not divide horizon 30" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = make_config(tmp_path, desk_system(), risk={"alpha": 0.8, "beta": 1})
    assert run("assess", cfg) == 1
    assert "beta" in capsys.readouterr().err


# ------------------------------------------------------------------- assess

def test_assess_zero_risk_and_report(tmp_path, capsys):
    rep = peak_scenarios(excess=(-30.0, -10.0))
    cfg = make_config(tmp_path, peak_system(), scenarios=rep, dispatch={"omega_rt": 100.0})
    assert run("assess", cfg) == 0
    out = tmp_path / "out"
    prof = read_csv(out / "risk_profile.csv", ["period", "var", "cvar", "flag"])
    assert len(prof) == rep.horizon and all(r["flag"] == "0" for r in prof)
    for name in ("traces.csv", "soc_reference.csv", "cvar.csv", "subgradients.csv", "assess_manifest.json"):
        assert (out / name).is_file()
    first = {p.name: p.read_bytes() for p in out.glob("*.csv")}
    assert run("assess", cfg) == 0
    assert {p.name: p.read_bytes() for p in out.glob("*.csv")} == first
    capsys.readouterr()
    assert run("report", cfg) == 0
    assert "flagged periods: 0" in capsys.readouterr().out
    assert (out / "summary.txt").is_file() and (out / "report_long.csv").is_file()


def test_threshold_file_too_short(tmp_path, capsys):
    rep = peak_scenarios()
    write_csv(tmp_path / "thr.csv", ["period", "threshold"], [[t, 1.0] for t in range(rep.horizon - 1)])
    cfg = make_config(tmp_path, peak_system(), scenarios=rep, risk={"threshold_file": "thr.csv"})
    assert run("assess", cfg) == 1
    assert "thr.csv" in capsys.readouterr().err


def test_evolution_failures_exit_2(tmp_path, capsys):
    rep = desk_history(3, 6)
    rep.data[:, 1, :] = 0.0
    rep.data[0, 2, 3] = 900.0  # more than the lines and local resources can bring to the load bus
    cfg = make_config(tmp_path, desk_system(), scenarios=rep)
    assert run("assess", cfg) == 2
    assert "only 2 of 3 scenarios completed" in capsys.readouterr().err


@pytest.mark.slow
def test_assess_desk_fixture_budget(tmp_path):
    cfg = make_config(tmp_path, desk_system(), scenarios=desk_history(20, 168, seed=0))
    t0 = time.perf_counter()
    assert run("assess", cfg) == 0
    assert time.perf_counter() - t0 < 300.0
    man = json.loads((tmp_path / "out" / "assess_manifest.json").read_text())
    assert man["completed"] == 20 and man["tail_size"] == 4


# ----------------------------------------------------------------- mitigate

def peak_cfg(tmp_path, excess, threshold):
    return make_config(tmp_path, peak_system(), scenarios=peak_scenarios(excess=excess),
                       risk={"threshold": threshold}, dispatch={"omega_rt": 100.0}, mitigation={"max_iter": 20})


def test_mitigate_already_cleared(tmp_path, capsys):
    cfg = peak_cfg(tmp_path, (-30.0, -10.0), 2000.0)
    assert run("mitigate", cfg) == 0
    man = json.loads((tmp_path / "out" / "mitigate_manifest.json").read_text())
    assert man["reason"] == "cleared" and man["iterations"] == 0


def test_mitigate_clearable_toy(tmp_path, capsys):
    cfg = peak_cfg(tmp_path, (0.0, 40.0), 2000.0)
    assert run("mitigate", cfg) == 0
    out = tmp_path / "out"
    rows = read_csv(out / "mitigation_report.csv", ["iteration", "accepted", "max_cvar"])
    accepted = [float(r["max_cvar"]) for r in rows if r["accepted"] == "1"]
    assert accepted == sorted(accepted, reverse=True) and len(rows) <= 21
    refs = read_csv(out / "mitigation_references.csv", ["iteration", "ses_id", "period", "soc_ref"])
    assert {r["iteration"] for r in refs} == {r["iteration"] for r in rows}
    capsys.readouterr()
    assert run("report", cfg) == 0
    text = capsys.readouterr().out
    assert "iteration 0 max CVaR" in text and "iteration 1 max CVaR" in text


def test_mitigate_unclearable_toy(tmp_path):
    cfg = peak_cfg(tmp_path, (100.0, 140.0), 0.0)
    assert run("mitigate", cfg) == 3
    out = tmp_path / "out"
    man = json.loads((out / "mitigate_manifest.json").read_text())
    assert man["reason"] == "stalled"
    ref = read_csv(out / "soc_reference_mitigated.csv", ["period", "soc_ref_ses"])
    vals = np.array([float(r["soc_ref_ses"]) for r in ref])
    assert np.all((vals >= 0.0) & (vals <= 100.0)) and np.all(np.abs(np.diff(vals)) <= 50.0 + 1e-9)


# ------------------------------------------------------------------- report

def test_report_on_empty_output(tmp_path, capsys):
    cfg = make_config(tmp_path, desk_system())
    (tmp_path / "out").mkdir()
    assert run("report", cfg) == 1
    assert "assess_manifest.json" in capsys.readouterr().err
