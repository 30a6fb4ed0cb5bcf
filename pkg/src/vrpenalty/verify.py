"""Self-check suite behind ``vrpenalty verify``.

Each check returns a :class:`CheckResult`; failing cases carry enough data
(seed, point, parameters) to be replayed by hand.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import estimators
from .diagnostics import GDistribution, error_bound_falsifier, fit_power_law, variance_replicate_check
from .errors import InsufficientDataError
from .problem import FeasibleSet
from .rng import STREAM_DIAGNOSTIC, SampleContext
from .schedules import ScheduleFamily, schedule_arrays, step_threshold
from .solvers import RunConfig, run
from .testproblems import make_test_problem

LINEAR = "family=linear-eq n=6 m=2 condition_number=2 noise_sigma=0.5 seed=11"
NOISY_LINEAR = "family=linear-eq n=6 m=2 condition_number=2 noise_sigma=20 seed=11"
SPHERE = "family=sphere n=3 m=1 noise_sigma=0.2 seed=5"
POWER = "family=power n=4 m=1 p=4 noise_sigma=0.2 seed=5"
ROSEN = "family=power n=3 m=1 p=2 objective=rosenbrock-regularized noise_sigma=0.1 seed=2"


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    failures: list = field(default_factory=list)


def _result(name, failures, detail):
    return CheckResult(name, not failures, detail, failures[:20])


def check_projection(seed: int = 0) -> CheckResult:
    """Pi_X(v) is in X and (v - p).(y - p) <= 0 for sampled members y."""
    rng = np.random.default_rng(seed)
    sets = {
        "box": FeasibleSet.box([-1.0, 0.0, -np.inf], [1.0, 2.0, 0.5]),
        "ball": FeasibleSet.ball([1.0, -0.5, 0.0], 0.7),
        "whole": FeasibleSet.whole(3),
    }
    failures, cases = [], 0
    for label, X in sets.items():
        members = X.sample_members(rng, 200)
        for _ in range(300):
            v = rng.normal(scale=3.0, size=3)
            p = X.project(v)
            cases += 1
            worst = float(np.max((members - p) @ (v - p)))
            scale = 1.0 + float(np.linalg.norm(v))
            if not X.contains(p) or worst > 1e-12 * scale**2 or not np.allclose(X.project(p), p, rtol=0, atol=1e-15):
                failures.append({"set": label, "v": v.tolist(), "p": p.tolist(), "worst_inner": worst})
    return _result("projection characterization", failures, f"{cases} projections on box/ball/whole")


def _cone_distance_bruteforce(lower, upper, x, v, grid):
    # N_X(x) for a 2-D box is a product of rays; search multipliers on a grid
    best = math.inf
    choices = []
    for i in range(2):
        if x[i] == lower[i] and x[i] == upper[i]:
            choices.append(np.concatenate([-grid[::-1], grid]))
        elif x[i] == lower[i]:
            choices.append(-grid)
        elif x[i] == upper[i]:
            choices.append(grid)
        else:
            choices.append(np.zeros(1))
    for a in choices[0]:
        d = (v[0] + a) ** 2 + (v[1] + choices[1]) ** 2
        best = min(best, float(d.min()))
    return math.sqrt(best)


def check_normal_cone(seed: int = 1) -> CheckResult:
    """Closed-form box normal-cone distance against a grid search."""
    rng = np.random.default_rng(seed)
    lower, upper = np.array([-1.0, 0.0]), np.array([1.0, 2.0])
    X = FeasibleSet.box(lower, upper)
    # v lives on the same 1e-3 lattice as the multipliers, so the grid optimum is exact
    grid = np.arange(0, 4001) / 1000.0
    points = [np.array(p) for p in itertools.product([-1.0, 0.3, 1.0], [0.0, 1.1, 2.0])]
    failures, cases = [], 0
    for x in points:
        for _ in range(10):
            v = rng.integers(-2000, 2001, size=2) / 1000.0
            fast = X.normal_cone_distance(x, v)
            brute = _cone_distance_bruteforce(lower, upper, x, v, grid)
            cases += 1
            if abs(fast - brute) > 1e-6:
                failures.append({"x": x.tolist(), "v": v.tolist(), "closed_form": fast, "grid": brute})
    return _result("normal-cone distance", failures, f"{cases} box cases vs grid search")


def check_error_bound(samples: int = 3000, seed: int = 2) -> CheckResult:
    """Falsification search finds no point below the certified gamma on any family."""
    failures, parts = [], []
    for desc in (LINEAR, SPHERE, POWER):
        problem = make_test_problem(desc)
        rep = error_bound_falsifier(problem, samples, SampleContext(seed, STREAM_DIAGNOSTIC))
        parts.append(f"{problem.name}: min ratio {rep.min_ratio:.4g} vs gamma {rep.gamma:.4g}")
        if rep.flagged:
            failures.append({"descriptor": desc, "min_ratio": rep.min_ratio, "gamma": rep.gamma,
                             "argmin": None if rep.argmin is None else rep.argmin.tolist()})
    return _result("error-bound certification", failures, "; ".join(parts))


def _short_runs(K=1500, seeds=(0, 1)):
    for desc in (LINEAR, SPHERE, POWER, ROSEN):
        problem = make_test_problem(desc)
        for algorithm in ("alg1", "alg2"):
            for seed in seeds:
                yield desc, problem, algorithm, seed, run(problem, RunConfig(algorithm=algorithm,
                                                                              max_iterations=K, seed=seed))


def check_accounting() -> CheckResult:
    """Counters: recursive 1 sample + 2 gradients per update, Polyak 1 + 1."""
    failures = []
    problem = make_test_problem(LINEAR)
    ctx = SampleContext(3)
    x = np.zeros(problem.n)
    for kind, per in (("recursive", 2), ("polyak", 1)):
        state = estimators.init_estimator(kind, problem, x, ctx)
        for j in range(1, 26):
            state = estimators.update(state, problem, x + 0.01 * j, 0.5, ctx)
            if state.samples != j + 1 or state.grad_evals != per * j + 1:
                failures.append({"kind": kind, "updates": j, "samples": state.samples,
                                 "grad_evals": state.grad_evals})
    for algorithm, per in (("alg1", 2), ("alg2", 1)):
        K = 300
        rec = run(problem, RunConfig(algorithm=algorithm, max_iterations=K, seed=4))
        k = rec.column("k")
        ok = (np.array_equal(rec.column("samples"), k) and np.array_equal(rec.column("grad_evals"), per * k - (per - 1))
              and rec.counter_mismatches == 0 and rec.counters["samples"] == K + 1)
        if not ok:
            failures.append({"algorithm": algorithm, "K": K, "counters": rec.counters,
                             "mismatches": rec.counter_mismatches})
    return _result("estimator accounting", failures, "direct updates and solver counters")


def check_boundedness() -> CheckResult:
    """||g_k|| <= L_f at every iteration, under noise far larger than L_f."""
    failures = []
    problem = make_test_problem(NOISY_LINEAR)
    L_f = problem.constants.L_f
    worst = 0.0
    for algorithm in ("alg1", "alg2"):
        for seed in range(3):
            rec = run(problem, RunConfig(algorithm=algorithm, max_iterations=2000, seed=seed))
            worst = max(worst, rec.max_g_norm)
            if rec.boundedness_violations or rec.max_g_norm > L_f:
                failures.append({"descriptor": NOISY_LINEAR, "algorithm": algorithm, "seed": seed,
                                 "max_g_norm": rec.max_g_norm, "L_f": L_f,
                                 "violations": rec.boundedness_violations})
    return _result("estimator boundedness", failures, f"max ||g|| {worst:.6g} vs L_f {L_f:.6g}")


def check_lemma_monitors(records) -> CheckResult:
    """No violations, and the applicable count matches the step condition computed independently."""
    failures, applicable, total = [], 0, 0
    for desc, problem, algorithm, seed, rec in records:
        fam = rec_family(algorithm)
        K = rec.K
        rho, eta, _ = schedule_arrays(fam, np.arange(1, K + 1))
        expected_app = int(np.count_nonzero(rho * eta <= step_threshold(problem.constants.L)))
        t = rec.monitor
        applicable += t.applicable
        total += K
        if t.violated or t.applicable != expected_app:
            failures.append({"descriptor": desc, "algorithm": algorithm, "seed": seed, "violated": t.violated,
                             "applicable": t.applicable, "expected_applicable": expected_app,
                             "first_violations": t.violations[:3]})
    return _result("descent-inequality monitors", failures, f"{applicable}/{total} applicable iterations hold")


def rec_family(algorithm):
    return ScheduleFamily.alg1() if algorithm == "alg1" else ScheduleFamily.alg2()


def check_surrogate(records) -> CheckResult:
    failures, checks = [], 0
    for desc, problem, algorithm, seed, rec in records:
        checks += rec.surrogate_checks
        if rec.surrogate_violations or rec.membership_violations:
            failures.append({"descriptor": desc, "algorithm": algorithm, "seed": seed,
                             "surrogate_violations": rec.surrogate_violations,
                             "membership_violations": rec.membership_violations})
    return _result("surrogate domination", failures, f"{checks} traced steps")


def check_variance(configs: int = 5, replicates: int = 2000, seed: int = 7) -> CheckResult:
    """One-step error recursion of both estimators at random states."""
    problem = make_test_problem(LINEAR)
    rng = np.random.default_rng(seed)
    failures, lines = [], []
    for i in range(configs):
        x_k = rng.normal(size=problem.n)
        x_k1 = x_k + rng.normal(scale=0.1, size=problem.n)
        alpha = float(rng.uniform(0.05, 1.0))
        scale = float(rng.uniform(0.0, 1.0))
        for kind in ("recursive", "polyak"):
            v = variance_replicate_check(problem, x_k, x_k1, GDistribution(scale), alpha, replicates, kind,
                                         ctx=SampleContext(seed + i, STREAM_DIAGNOSTIC))
            lines.append(v.holds)
            if not v.holds:
                failures.append({"config": i, "kind": kind, "x_k": x_k.tolist(), "x_k1": x_k1.tolist(),
                                 "alpha": alpha, "scale": scale, "diff_mean": v.diff_mean, "diff_se": v.diff_se})
    return _result("variance recursion", failures, f"{sum(lines)}/{len(lines)} replicate checks within 3 SE")


def check_fit_rate() -> CheckResult:
    failures = []
    k = np.unique(np.round(np.geomspace(1, 1e5, 400))).astype(float)
    for slope in (-0.5, -2.0 / 3.0, -1.0):
        fit = fit_power_law(k, 3.0 * k**slope, (1e3, 1e5))
        if abs(fit.slope - slope) > 1e-10 or abs(fit.r_squared - 1.0) > 1e-12:
            failures.append({"case": "exact power law", "slope": slope, "fitted": fit.slope})
    q = 2.0 * k**-1.0
    q[k > 5e4] = 0.0
    fit = fit_power_law(k, q, (1e3, 1e5))
    if not fit.truncated or abs(fit.slope + 1.0) > 1e-10:
        failures.append({"case": "zero tail", "truncated": fit.truncated, "fitted": fit.slope})
    try:
        fit_power_law(k[:20], k[:20] ** -1.0, (1, 20))
        failures.append({"case": "too few rows", "raised": False})
    except InsufficientDataError:
        pass
    return _result("rate-fit self-test", failures, "exact power laws, zero tail, short input")


def check_schedules() -> CheckResult:
    failures = []
    k = np.arange(1, 10**6 + 1, dtype=float)
    for fam in (ScheduleFamily.alg1(1.0), ScheduleFamily.alg2()):
        rho, eta, _ = schedule_arrays(fam, k)
        target = 1.0 / (4.0 * np.log(k + 2.0))
        err = float(np.max(np.abs(rho * eta - target) / target))
        if err > 4.0 * np.finfo(float).eps:
            failures.append({"schedule": fam.label(), "max_relative_error": err})
    return _result("schedule identities", failures, "rho*eta = 1/(4 ln(k+2)) within 4 ulp up to k = 1e6")


def run_all(log=print) -> list:
    records = list(_short_runs())
    checks = [
        check_projection, check_normal_cone, check_error_bound, check_accounting, check_boundedness,
        lambda: check_lemma_monitors(records), lambda: check_surrogate(records), check_variance,
        check_fit_rate, check_schedules,
    ]
    results = []
    for chk in checks:
        res = chk()
        results.append(res)
        log(f"{'PASS' if res.passed else 'FAIL'}  {res.name:<30} {res.detail}")
    return results


def write_failures(results, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    failed = [asdict(r) for r in results if not r.passed]
    path.write_text(json.dumps(failed, indent=2, sort_keys=True, default=float) + "\n", encoding="utf-8")
    return path
