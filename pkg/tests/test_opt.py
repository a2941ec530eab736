import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles.tableau import tableau_lp
from tailrisk.opt import (EQ, GE, LE, LinearProgram, MixedIntegerProgram, ModelError, Status, add_pwl_convex,
                          evaluate_pwl, quadratic_tangents, solve_lp, solve_milp)

ORACLE = Path(__file__).parent / "data" / "mip_oracle.json"


def build_lp(c, A, senses, rhs, lo, hi, binaries=(), cls=None):
    cls = cls or (MixedIntegerProgram if binaries else LinearProgram)
    lp = cls()
    for j, cj in enumerate(c):
        if j in binaries:
            lp.add_binary(cj)
        else:
            lp.add_variable(lo[j], hi[j], cj)
    for row, s, r in zip(A, senses, rhs):
        lp.add_row({j: a for j, a in enumerate(row)}, s, r)
    return lp


def mip_from_record(p):
    nb, nc = p["n_bin"], p["n_cont"]
    n = nb + nc
    A = np.array(p["A"]).reshape(-1, n)
    lo = [0.0] * n
    hi = [1.0] * nb + list(p["upper_cont"])
    return build_lp(p["c"], A, p["senses"], p["rhs"], lo, hi, binaries=set(range(nb)), cls=MixedIntegerProgram)


# ---------------------------------------------------------------- LP examples

def test_single_bound():
    lp = LinearProgram()
    x = lp.add_variable(0, 10, 1.0)
    lp.add_row({x: 1.0}, GE, 3.0)
    sol = solve_lp(lp)
    assert sol.status is Status.OPTIMAL
    assert sol.x[0] == pytest.approx(3.0) and sol.objective == pytest.approx(3.0)


def test_face_optimum():
    lp = LinearProgram()
    x, y = lp.add_variable(0, 1, -1.0), lp.add_variable(0, 1, -1.0)
    lp.add_row({x: 1.0, y: 1.0}, LE, 1.0)
    sol = solve_lp(lp)
    assert sol.objective == pytest.approx(-1.0)
    assert sol.x.sum() == pytest.approx(1.0)


def test_infeasible_and_unbounded():
    lp = LinearProgram()
    x = lp.add_variable(0, 1)
    lp.add_row({x: 1.0}, GE, 2.0)
    assert solve_lp(lp).status is Status.INFEASIBLE
    lp = LinearProgram()
    x = lp.add_variable(0, math.inf, -1.0)
    lp.add_row({x: 1.0}, GE, 1.0)
    assert solve_lp(lp).status is Status.UNBOUNDED


def test_free_variables_and_equalities():
    lp = LinearProgram()
    x = lp.add_variable(-math.inf, math.inf, 1.0)
    y = lp.add_variable(-math.inf, math.inf, 2.0)
    lp.add_row({x: 1.0, y: 1.0}, EQ, 4.0)
    lp.add_row({x: 1.0, y: -1.0}, LE, 2.0)
    sol = solve_lp(lp)
    assert sol.x == pytest.approx([3.0, 1.0])
    assert sol.objective == pytest.approx(5.0)


def test_model_errors():
    lp = LinearProgram()
    with pytest.raises(ModelError):
        lp.add_variable(2.0, 1.0)
    x = lp.add_variable()
    with pytest.raises(ModelError):
        lp.add_row({x + 1: 1.0}, LE, 0.0)
    with pytest.raises(ModelError):
        lp.add_row({x: 1.0}, "<", 0.0)
    with pytest.raises(ModelError):
        lp.add_row({x: 1.0}, LE, math.inf)
    with pytest.raises(ModelError):
        MixedIntegerProgram().add_binary(lower=-1.0)


def _random_lp(rng, m=6, n=8):
    A = rng.uniform(-3, 3, (m, n))
    x0 = rng.uniform(0, 2, n)
    ub = rng.uniform(2, 5, n)
    senses = rng.choice([LE, GE, EQ], size=m, p=[0.5, 0.35, 0.15])
    slack = rng.uniform(0, 2, m)
    act = A @ x0
    rhs = np.where(senses == LE, act + slack, np.where(senses == GE, act - slack, act))
    c = rng.uniform(-5, 5, n)
    return c, A, senses, rhs, ub


def _tableau(c, A, senses, rhs, ub):
    le, ge, eq = senses == LE, senses == GE, senses == EQ
    A_ub = np.vstack([A[le], -A[ge]])
    b_ub = np.concatenate([rhs[le], -rhs[ge]])
    return tableau_lp(c, A_ub, b_ub, A[eq], rhs[eq], ub)


def test_random_lps_match_tableau_oracle():
    rng = np.random.default_rng(7)
    for _ in range(150):
        c, A, senses, rhs, ub = _random_lp(rng)
        status, obj, _ = _tableau(c, A, senses, rhs, ub)
        assert status == "optimal"
        sol = solve_lp(build_lp(c, A, senses, rhs, np.zeros(8), ub))
        assert sol.status is Status.OPTIMAL
        assert sol.objective == pytest.approx(obj, rel=1e-7, abs=1e-7)


def test_debug_dump():
    mip = MixedIntegerProgram()
    x = mip.add_binary(1.0, name="x")
    y = mip.add_variable(0, 3, -1.0, name="y")
    mip.add_row({x: 2.0, y: 1.0}, LE, 3.0)
    text = mip.to_text()
    assert "Minimize" in text and "Binary" in text and " x" in text
    assert text.endswith("End\n")


# --------------------------------------------------------------- MIP examples

def test_tiny_cover():
    mip = MixedIntegerProgram()
    x, y = mip.add_binary(1.0), mip.add_binary(1.0)
    mip.add_row({x: 1.0, y: 1.0}, GE, 1.0)
    sol = solve_milp(mip)
    assert sol.status is Status.OPTIMAL and sol.objective == pytest.approx(1.0)
    assert set(np.round(sol.x)) <= {0.0, 1.0}


def test_integral_relaxation_needs_no_branching():
    mip = MixedIntegerProgram()
    x, y = mip.add_binary(-2.0), mip.add_binary(1.0)
    mip.add_row({x: 1.0, y: -1.0}, LE, 1.0)
    sol = solve_milp(mip)
    lp = solve_lp(mip.relaxation())
    assert sol.nodes == 1
    assert sol.objective == lp.objective


def test_infeasible_mip():
    mip = MixedIntegerProgram()
    x, y = mip.add_binary(), mip.add_binary()
    mip.add_row({x: 1.0, y: 1.0}, EQ, 1.5)
    assert solve_milp(mip).status is Status.INFEASIBLE


def test_frozen_oracle_subset():
    problems = json.loads(ORACLE.read_text())["problems"][:60]
    for p in problems:
        sol = solve_milp(mip_from_record(p))
        if p["objective"] is None:
            assert sol.status is Status.INFEASIBLE
        else:
            assert sol.status is Status.OPTIMAL
            assert sol.objective == pytest.approx(p["objective"], rel=1e-6, abs=1e-6)


# ---------------------------------------------------------------------- PWL

def test_abs_value_epigraph():
    lp = LinearProgram()
    x = lp.add_variable(-3.0, -3.0)
    t = add_pwl_convex(lp, x, breakpoints=[-1.0, 1.0], slopes=[-1.0, 1.0], values=[1.0, 1.0])
    sol = solve_lp(lp)
    assert sol.x[t] == pytest.approx(3.0) and sol.objective == pytest.approx(3.0)


def test_quadratic_tangents_exact_at_breakpoints_and_bounded_error():
    pts, s, v = quadratic_tangents(-1.0, 1.0, 8)
    for b in pts:
        assert evaluate_pwl(b, pts, s, v) == pytest.approx(b * b, abs=1e-15)
    grid = np.linspace(-1, 1, 4001)
    gap = max(g * g - evaluate_pwl(g, pts, s, v) for g in grid)
    assert gap <= 1.0 / 64 + 1e-12
    assert gap == pytest.approx(1.0 / 64, rel=1e-3)


def test_pwl_in_lp_matches_evaluation():
    pts, s, v = quadratic_tangents(-1.0, 1.0, 8)
    for x0 in (-0.9, -0.3, 0.0, 0.55, 1.0):
        lp = LinearProgram()
        x = lp.add_variable(x0, x0)
        add_pwl_convex(lp, x, pts, s, v)
        assert solve_lp(lp).objective == pytest.approx(evaluate_pwl(x0, pts, s, v))


def test_non_convex_pwl_rejected():
    lp = LinearProgram()
    x = lp.add_variable(-1, 1)
    with pytest.raises(ModelError, match="non-convex PWL"):
        add_pwl_convex(lp, x, [0.0, 1.0], [1.0, -1.0], [0.0, 0.0])


# --------------------------------------------------------------- properties

@st.composite
def small_mips(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    nb, nc, m = int(rng.integers(1, 6)), int(rng.integers(0, 5)), int(rng.integers(1, 5))
    n = nb + nc
    A = np.round(rng.uniform(-4, 4, (m, n)), 1)
    x0 = np.concatenate([rng.integers(0, 2, nb), rng.uniform(0, 3, nc)])
    rhs = A @ x0 + np.round(rng.uniform(0, 2, m), 1)
    c = np.round(rng.uniform(-5, 5, n), 1)
    hi = [1.0] * nb + [3.0] * nc
    return build_lp(c, A, [LE] * m, rhs, [0.0] * n, hi, binaries=set(range(nb)), cls=MixedIntegerProgram)


@settings(max_examples=60, deadline=None)
@given(small_mips())
def test_mip_properties(mip):
    sol = solve_milp(mip)
    assert sol.status is Status.OPTIMAL
    assert mip.max_violation(sol.x) <= 1e-6
    xb = sol.x[sorted(mip.binaries)]
    assert np.all(np.abs(xb - np.round(xb)) <= 1e-6)
    relax = solve_lp(mip.relaxation())
    assert relax.status is Status.OPTIMAL
    assert mip.max_violation(relax.x) <= 1e-6
    assert sol.objective >= relax.objective - 1e-7
    again = solve_milp(mip)
    assert again.objective == sol.objective and np.array_equal(again.x, sol.x)
