"""Acceptance suite: one test per criterion, each at its stated tolerance.

The rate criteria share one execution of ``plans/acceptance.ini`` (20 seeds,
K = 1e5, both algorithms), which takes a minute or two on one core.  A
PASS/FAIL line per criterion is printed in the terminal summary.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from vrpenalty import harness
from vrpenalty.diagnostics import GDistribution, variance_replicate_check
from vrpenalty.problem import SmoothnessConstants
from vrpenalty.rng import STREAM_DIAGNOSTIC, SampleContext
from vrpenalty.schedules import ScheduleFamily, schedule_arrays, theory_constants
from vrpenalty.solvers import RunConfig, run
from vrpenalty.testproblems import make_test_problem, scalar_quadratic_problem

PLAN = Path(__file__).resolve().parent.parent / "plans" / "acceptance.ini"


@pytest.fixture(scope="module")
def acceptance(tmp_path_factory):
    plan = harness.load_plan(PLAN)
    out = tmp_path_factory.mktemp("acceptance")
    start = time.perf_counter()
    agg = harness.execute_plan(plan, out, log=lambda *a: None)
    traces = {p.name[:-4]: harness.parse_trace_csv(p.read_text()) for p in (out / "traces").glob("*.csv")}
    return {"plan": plan, "out": out, "agg": agg, "traces": traces, "elapsed": time.perf_counter() - start}


@pytest.fixture(scope="module")
def kkt_run():
    p = scalar_quadratic_problem()
    start = time.perf_counter()
    rec = run(p, RunConfig(algorithm="alg2", max_iterations=10**5, seed=1))
    return rec, time.perf_counter() - start


def _slope(agg, group, quantity):
    return agg["slopes"][group][quantity]["slope"]


def test_criterion_01_alg1_rates(acceptance, verdict):
    agg = acceptance["agg"]
    assert tuple(agg["fit_window"]) == (1000.0, 100000.0)
    feas = _slope(agg, "lin__alg1", "feasibility_sq")
    resid = _slope(agg, "lin__alg1", "exact_residual_sq")
    ok = -0.87 <= feas <= -0.47 and -0.92 <= resid <= -0.42
    verdict(1, ok, f"alg1 mean slopes: feasibility {feas:.3f} in [-0.87,-0.47], residual {resid:.3f} in "
                   f"[-0.92,-0.42] ({acceptance['elapsed']:.0f}s for the plan)")
    assert ok


def test_criterion_02_sure_envelope(acceptance, verdict):
    env = _slope(acceptance["agg"], "lin__alg1", "feasibility_sq_envelope")
    # independent envelope straight from the per-seed trace files
    seeds = [acceptance["traces"][f"lin__alg1__s{s}"] for s in acceptance["plan"].seeds]
    k = seeds[0]["k"]
    peak = np.max([2.0 * t["h"] for t in seeds], axis=0)
    mask = (k >= 1000) & (k <= 100000)
    independent = np.polyfit(np.log(k[mask]), np.log(peak[mask]), 1)[0]
    ok = -0.92 <= env <= -0.42 and abs(env - independent) < 1e-9
    verdict(2, ok, f"alg1 per-seed max envelope slope {env:.3f} in [-0.92,-0.42]")
    assert ok


def test_criterion_03_alg2_rates(acceptance, verdict):
    agg = acceptance["agg"]
    feas = _slope(agg, "lin__alg2", "feasibility_sq")
    resid = _slope(agg, "lin__alg2", "exact_residual_sq")
    ok = -1.25 <= feas <= -0.75 and -0.75 <= resid <= -0.25
    verdict(3, ok, f"alg2 mean slopes: feasibility {feas:.3f} in [-1.25,-0.75], residual {resid:.3f} in "
                   f"[-0.75,-0.25]")
    assert ok


def test_criterion_04_descent_monitor(acceptance, kkt_run, verdict):
    tot = acceptance["agg"]["monitor_tallies"]["total"]
    rec, _ = kkt_run
    holds = tot["holds"] + rec.monitor.holds
    violated = tot["violated"] + rec.monitor.violated
    # applicable iterations are exactly the rows whose step condition held
    step_rows = sum(int(t["step_cond"].sum()) for t in acceptance["traces"].values())
    verdicts = sum(sum(v == "holds" for v in t["lemma_verdict"]) for t in acceptance["traces"].values())
    ok = violated == 0 and holds > 0 and verdicts == step_rows
    verdict(4, ok, f"descent inequality holds on {holds} applicable iterations, {violated} violations")
    assert ok


def test_criterion_05_boundedness_and_counters(acceptance, verdict):
    tallies = acceptance["agg"]["monitor_tallies"]
    problem = make_test_problem(acceptance["plan"].problems["lin"])
    worst = max(t["max_g_norm"] for c, t in tallies.items() if c != "total")
    bad_rows = 0
    for cid, t in acceptance["traces"].items():
        k = t["k"]
        evals = 2 * k - 1 if "__alg1__" in cid else k
        bad_rows += int(np.sum(t["samples"] != k) + np.sum(t["grad_evals"] != evals))
        bad_rows += int(np.sum(t["g_norm"] > problem.constants.L_f))
    tot = tallies["total"]
    ok = (worst <= problem.constants.L_f and tot["boundedness_violations"] == 0 and tot["counter_mismatches"] == 0
          and bad_rows == 0)
    verdict(5, ok, f"max ||g|| {worst:.4f} <= L_f {problem.constants.L_f:.4f}; counter mismatches "
                   f"{tot['counter_mismatches']} inline, {bad_rows} in traces")
    assert ok


def test_criterion_06_variance_recursion(verdict):
    problem = make_test_problem(harness.load_plan(PLAN).problems["lin"])
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    results = []
    for i in range(5):
        x_k = rng.normal(size=problem.n)
        x_k1 = x_k + rng.normal(scale=0.1, size=problem.n)
        alpha = float(rng.uniform(0.05, 1.0))
        scale = float(rng.uniform(0.0, 1.0))
        for kind in ("recursive", "polyak"):
            results.append(variance_replicate_check(problem, x_k, x_k1, GDistribution(scale), alpha, 2000, kind,
                                                    ctx=SampleContext(100 + i, STREAM_DIAGNOSTIC)))
    elapsed = time.perf_counter() - start
    passed = sum(v.holds for v in results)
    ok = passed == len(results) and elapsed < 60
    verdict(6, ok, f"{passed}/{len(results)} replicate checks within 3 SE, {elapsed:.1f}s")
    assert ok


def test_criterion_07_surrogate_domination(acceptance, verdict):
    tallies = acceptance["agg"]["monitor_tallies"]
    cells = [c for c in tallies if c != "total"]
    fewest = min(tallies[c]["surrogate_checks"] for c in cells)
    inline = tallies["total"]["surrogate_violations"]
    recomputed = 0
    for t in acceptance["traces"].values():
        recomputed += int(np.sum(t["resid_exact"] ** 2 > t["resid_surrogate"]))
    ok = fewest >= 1000 and inline == 0 and recomputed == 0
    verdict(7, ok, f"exact residual^2 <= surrogate at >= {fewest} steps per run, violations {inline}/{recomputed}")
    assert ok


def test_criterion_08_kkt_recovery(kkt_run, verdict):
    rec, elapsed = kkt_run
    x = float(rec.terminal.x[0])
    lam = float(rec.terminal.multiplier[0])
    ok = abs(x - 1.0) <= 1e-2 and abs(lam + 2.0) <= 0.2 and elapsed < 1.0
    verdict(8, ok, f"x = {x:.5f}, lambda = {lam:.4f}, {elapsed:.2f}s")
    assert ok


def test_criterion_09_determinism(acceptance, verdict):
    plan = acceptance["plan"]
    checked = []
    for algo, seed in (("alg1", plan.seeds[0]), ("alg2", plan.seeds[-1])):
        res = harness.run_cell(plan, "lin", algo, seed)
        path = acceptance["out"] / "traces" / f"{harness.cell_id('lin', algo, seed)}.csv"
        checked.append(res["csv"].encode("utf-8") == path.read_bytes())
    ok = all(checked)
    verdict(9, ok, f"{sum(checked)}/{len(checked)} re-run traces byte-identical")
    assert ok


def test_criterion_10_schedule_identities(verdict):
    k = np.arange(1, 10**6 + 1, dtype=float)
    target = 1.0 / (4.0 * np.log(k + 2.0))
    worst = 0.0
    for fam in (ScheduleFamily.alg1(1.0), ScheduleFamily.alg2()):
        rho, eta, _ = schedule_arrays(fam, k)
        worst = max(worst, float(np.max(np.abs(rho * eta - target) / target)))
    unit = SmoothnessConstants(L_f=1.0, L_c=1.0, C_c=1.0, L_nabla_c=0.0, sigma=0.0, gamma=1.0, theta=1.0,
                               L_bar_nabla_f=1.0, L_nabla_f=1.0)
    k1 = theory_constants(ScheduleFamily.alg1(1.0), unit).K_tilde
    ulp4 = 4 * np.finfo(float).eps
    ok = worst <= ulp4 and k1 == 842
    verdict(10, ok, f"max relative error of rho*eta {worst:.2e} (<= {ulp4:.2e}); K_tilde = {k1}")
    assert ok
