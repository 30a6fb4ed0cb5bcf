"""Experiment plans, multi-seed orchestration, trace I/O, reports and self-checks.

Plan files are INI text::

    [plan]
    K = 100000
    seeds = 1-20            # or a comma list
    fit_window = 1000, 100000
    formats = csv, json

    [problem.lin]
    family = linear-eq
    n = 20
    m = 5
    noise_sigma = 0.5

    [algorithm.a1]
    algorithm = alg1
    schedule = alg1-general
    theta_hat = 1

Every (problem, algorithm, seed) combination is one cell.  Each cell writes
``traces/<problem>__<algorithm>__s<seed>.csv``; the run also writes
``manifest.json`` (cell list, wall times) and ``aggregate.json``.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .diagnostics import default_fit_window, fit_power_law
from .errors import ConfigurationError, DivergenceError, InputError, InsufficientDataError, ReportError
from .schedules import ScheduleFamily, theory_constants
from .solvers import MONITORS, TRACE_COLUMNS, RunConfig, run
from .testproblems import describe_constants, make_test_problem

OUT_ENV = "VRPENALTY_OUT"
DEFAULT_OUT = "vrpenalty-out"
FORMATS = ("csv", "json")
AGGREGATE_KEYS = ("plan_digest", "cells", "slopes", "envelopes", "monitor_tallies", "terminal_certificates")
_PLAN_KEYS = {"k", "seeds", "trace_stride", "fit_window", "formats", "epsilon", "monitors", "out"}
_ALGO_KEYS = {"algorithm", "schedule", "theta_hat", "theta", "truncation_radius"}


class PlanError(ConfigurationError):
    """Malformed or invalid plan file (message names the offending key)."""


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    algorithm: str
    schedule: ScheduleFamily
    truncation_radius: Optional[float] = None


@dataclass
class ExperimentPlan:
    K: int
    seeds: list
    problems: dict
    algorithms: dict
    trace_stride: Optional[int] = None
    fit_window: Optional[tuple] = None
    formats: tuple = FORMATS
    epsilon: float = 1e-2
    monitors: frozenset = MONITORS
    out: Optional[str] = None
    digest: str = ""

    def cells(self):
        for p in sorted(self.problems):
            for a in sorted(self.algorithms):
                for s in self.seeds:
                    yield p, a, s

    def run_config(self, algo: AlgorithmSpec, seed: int) -> RunConfig:
        return RunConfig(algorithm=algo.algorithm, schedule=algo.schedule, max_iterations=self.K,
                         epsilon=self.epsilon, seed=seed, trace_stride=self.trace_stride, monitors=self.monitors,
                         truncation_radius=algo.truncation_radius)


def cell_id(problem: str, algorithm: str, seed: int) -> str:
    return f"{problem}__{algorithm}__s{seed}"


def group_id(problem: str, algorithm: str) -> str:
    return f"{problem}__{algorithm}"


# --- plan parsing ---------------------------------------------------------------

def _parse_seeds(raw: str) -> list:
    seeds = []
    for part in raw.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def _key_error(section, key, msg):
    return PlanError(f"plan [{section}] key '{key}': {msg}")


def _get(section, key, cast, default=None):
    raw = section.get(key)
    if raw is None:
        return default
    try:
        return cast(raw)
    except (ValueError, TypeError) as exc:
        raise _key_error(section.name, key, f"cannot parse {raw!r} ({exc})") from None


def parse_plan(text: str, source: str = "<plan>") -> ExperimentPlan:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise PlanError(f"{source}: {exc}") from None
    if not cp.has_section("plan"):
        raise PlanError(f"{source}: missing [plan] section")
    sec = cp["plan"]
    unknown = set(sec) - _PLAN_KEYS
    if unknown:
        raise _key_error("plan", sorted(unknown)[0], "unknown key")
    K = _get(sec, "K", int)
    if K is None or K < 2:
        raise _key_error("plan", "K", "horizon must be an integer >= 2")
    seeds = _get(sec, "seeds", _parse_seeds)
    if not seeds:
        raise _key_error("plan", "seeds", "seed list must be nonempty")
    dup = sorted({s for s in seeds if seeds.count(s) > 1})
    if dup:
        raise _key_error("plan", "seeds", f"duplicate seeds {dup}")
    if any(s < 0 for s in seeds):
        raise _key_error("plan", "seeds", "seeds must be nonnegative")
    stride = _get(sec, "trace_stride", int)
    if stride is not None and stride < 1:
        raise _key_error("plan", "trace_stride", "must be a positive integer")
    window = _get(sec, "fit_window", lambda r: tuple(float(v) for v in r.split(",")))
    if window is not None and (len(window) != 2 or not 1 <= window[0] < window[1]):
        raise _key_error("plan", "fit_window", "expected 'k_min, k_max' with 1 <= k_min < k_max")
    formats = _get(sec, "formats", lambda r: tuple(v.strip() for v in r.split(",") if v.strip()), FORMATS)
    if not formats or set(formats) - set(FORMATS):
        raise _key_error("plan", "formats", f"expected a subset of {', '.join(FORMATS)}")
    epsilon = _get(sec, "epsilon", float, 1e-2)
    if not epsilon > 0:
        raise _key_error("plan", "epsilon", "must be positive")
    monitors = _get(sec, "monitors", lambda r: frozenset(v.strip() for v in r.split(",") if v.strip()), MONITORS)
    if monitors - MONITORS:
        raise _key_error("plan", "monitors", f"expected a subset of {', '.join(sorted(MONITORS))}")

    problems, algorithms = {}, {}
    for name in cp.sections():
        if name == "plan":
            continue
        kind, _, label = name.partition(".")
        if not label or kind not in ("problem", "algorithm"):
            raise PlanError(f"{source}: unexpected section [{name}]; use [problem.NAME] or [algorithm.NAME]")
        if "__" in label:
            raise PlanError(f"{source}: section name [{name}] must not contain '__'")
        s = cp[name]
        if kind == "problem":
            desc = dict(s)
            try:
                make_test_problem(desc)
            except ConfigurationError as exc:
                raise PlanError(f"plan [{name}]: {exc}") from None
            problems[label] = desc
        else:
            unknown = set(s) - _ALGO_KEYS
            if unknown:
                raise _key_error(name, sorted(unknown)[0], "unknown key")
            algo = s.get("algorithm")
            if algo not in ("alg1", "alg2"):
                raise _key_error(name, "algorithm", "expected alg1 or alg2")
            kind_default = "alg1-general" if algo == "alg1" else "alg2-general"
            try:
                schedule = ScheduleFamily(s.get("schedule", kind_default), theta_hat=_get(s, "theta_hat", float),
                                          theta=_get(s, "theta", float))
            except ConfigurationError as exc:
                raise _key_error(name, "schedule", str(exc)) from None
            if schedule.algorithm != algo:
                raise _key_error(name, "schedule", f"{schedule.kind} does not belong to {algo}")
            algorithms[label] = AlgorithmSpec(label, algo, schedule, _get(s, "truncation_radius", float))
    if not problems:
        raise PlanError(f"{source}: no [problem.NAME] section")
    if not algorithms:
        raise PlanError(f"{source}: no [algorithm.NAME] section")
    return ExperimentPlan(K=K, seeds=seeds, problems=problems, algorithms=algorithms, trace_stride=stride,
                          fit_window=window, formats=formats, epsilon=epsilon, monitors=monitors,
                          out=sec.get("out"), digest=hashlib.sha256(text.encode("utf-8")).hexdigest())


def load_plan(path) -> ExperimentPlan:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read plan {path}: {exc}") from None
    return parse_plan(text, source=str(path))


def resolve_out(cli_out: Optional[str], plan: Optional[ExperimentPlan] = None) -> Path:
    if cli_out:
        return Path(cli_out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    if plan is not None and plan.out:
        return Path(plan.out)
    return Path(DEFAULT_OUT)


# --- cell execution -------------------------------------------------------------

def run_cell(plan: ExperimentPlan, problem_name: str, algo_name: str, seed: int) -> dict:
    """Run one cell; returns a picklable result dict (no exceptions for divergence)."""
    problem = make_test_problem(plan.problems[problem_name])
    algo = plan.algorithms[algo_name]
    cid = cell_id(problem_name, algo_name, seed)
    try:
        record = run(problem, plan.run_config(algo, seed))
    except DivergenceError as exc:
        return {"cell": cid, "problem": problem_name, "algorithm": algo_name, "seed": seed,
                "error": str(exc), "diverged_at": exc.k}
    return {"cell": cid, "problem": problem_name, "algorithm": algo_name, "seed": seed,
            "csv": record.to_csv(), "summary": record.summary(), "wall_time": record.wall_time}


def _run_cell_args(args):
    return run_cell(*args)


def execute_plan(plan: ExperimentPlan, out_dir, jobs: Optional[int] = None, formats=None, log=print) -> dict:
    """Run every cell, write traces, manifest and aggregate; return the aggregate."""
    out_dir = Path(out_dir)
    traces = out_dir / "traces"
    try:
        traces.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out_dir}: {exc}") from None
    formats = tuple(formats or plan.formats)
    for name, desc in sorted(plan.problems.items()):
        log(f"# problem {name}")
        log(describe_constants(make_test_problem(desc)))
    cells = list(plan.cells())
    jobs = jobs or os.cpu_count() or 1
    args = [(plan, p, a, s) for p, a, s in cells]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_args, args))
    else:
        results = [run_cell(*a) for a in args]

    manifest_cells = []
    for res in results:
        entry = {"cell": res["cell"], "problem": res["problem"], "algorithm": res["algorithm"], "seed": res["seed"]}
        if "error" in res:
            entry["error"] = res["error"]
            log(f"{res['cell']}: DIVERGED ({res['error']})")
        else:
            path = traces / f"{res['cell']}.csv"
            path.write_text(res["csv"], encoding="utf-8")
            entry["trace"] = f"traces/{path.name}"
            entry["wall_time"] = res["wall_time"]
            log(f"{res['cell']}: done in {res['wall_time']:.2f}s")
        manifest_cells.append(entry)
    manifest = {
        "version": __version__, "plan_digest": plan.digest, "K": plan.K, "seeds": plan.seeds,
        "fit_window": list(fit_window_for(plan)), "problems": plan.problems,
        "algorithms": {k: {"algorithm": v.algorithm, "schedule": v.schedule.label()}
                       for k, v in sorted(plan.algorithms.items())},
        "cells": manifest_cells,
    }
    _write_json(out_dir / "manifest.json", manifest)
    aggregate = build_aggregate(plan, results)
    if "json" in formats:
        _write_json(out_dir / "aggregate.json", aggregate)
    if "csv" in formats:
        write_slopes_csv(out_dir / "slopes.csv", aggregate["slopes"])
    return aggregate


def fit_window_for(plan: ExperimentPlan):
    if plan.fit_window is not None:
        return plan.fit_window
    windows = []
    for algo in plan.algorithms.values():
        for desc in plan.problems.values():
            theory = theory_constants(algo.schedule, make_test_problem(desc).constants)
            windows.append(default_fit_window(theory, plan.K)[0])
    return max(w[0] for w in windows), plan.K


# --- aggregation ----------------------------------------------------------------

def _fit_or_note(k, q, window, quantity):
    try:
        return fit_power_law(k, q, window, quantity).as_dict()
    except InsufficientDataError as exc:
        return {"quantity": quantity, "error": str(exc)}


def aggregate_groups(groups: dict, window) -> tuple:
    """Cross-seed fits and envelopes for {group: {seed: columns}}."""
    slopes, envelopes = {}, {}
    for gid in sorted(groups):
        seeds = groups[gid]
        order = sorted(seeds)
        k = seeds[order[0]]["k"]
        for s in order:
            if not np.array_equal(seeds[s]["k"], k):
                raise ReportError(f"group {gid}: seed {s} has a different trace grid")
        feas = np.array([2.0 * seeds[s]["h"] for s in order])
        resid = np.array([seeds[s]["resid_exact"] ** 2 for s in order])
        sur = np.array([seeds[s]["resid_surrogate"] for s in order])
        envelope = feas.max(axis=0)
        slopes[gid] = {
            "seeds": len(order),
            "feasibility_sq": _fit_or_note(k, feas.mean(axis=0), window, "feasibility_sq"),
            "exact_residual_sq": _fit_or_note(k, resid.mean(axis=0), window, "exact_residual_sq"),
            "surrogate": _fit_or_note(k, sur.mean(axis=0), window, "surrogate"),
            "feasibility_sq_envelope": _fit_or_note(k, envelope, window, "feasibility_sq"),
        }
        envelopes[gid] = {"k": k.tolist(), "feasibility_sq_max": envelope.tolist()}
    return slopes, envelopes


def build_aggregate(plan: ExperimentPlan, results: list) -> dict:
    window = fit_window_for(plan)
    groups, tallies, certs, cells = {}, {}, {}, []
    totals = {"holds": 0, "violated": 0, "not_applicable": 0, "boundedness_violations": 0,
              "counter_mismatches": 0, "surrogate_checks": 0, "surrogate_violations": 0,
              "membership_violations": 0, "diverged": 0}
    for res in sorted(results, key=lambda r: r["cell"]):
        cells.append(res["cell"])
        if "error" in res:
            totals["diverged"] += 1
            tallies[res["cell"]] = {"diverged": res["error"]}
            continue
        summ = res["summary"]
        cols = parse_trace_csv(res["csv"])
        groups.setdefault(group_id(res["problem"], res["algorithm"]), {})[res["seed"]] = cols
        mon = summ["monitor"]
        t = {"holds": mon["holds"], "violated": mon["violated"], "not_applicable": mon["not_applicable"],
             "violations": mon["violations"], "max_g_norm": summ["max_g_norm"]}
        for key in ("boundedness_violations", "counter_mismatches", "surrogate_checks", "surrogate_violations",
                    "membership_violations"):
            t[key] = summ[key]
        for key in totals:
            if key in t and key != "diverged":
                totals[key] += t[key]
        t["counters"] = summ["counters"]
        tallies[res["cell"]] = t
        certs[res["cell"]] = summ["terminal"]
    tallies["total"] = totals
    slopes, envelopes = aggregate_groups(groups, window)
    # cross-seed means at each seed's randomly selected output index: this, not the
    # fixed-k mean, is the quantity the rate guarantees bound in expectation
    for gid in sorted(groups):
        members = [c for c in certs if c.startswith(gid + "__s")]
        res2 = [certs[c]["residual"] ** 2 for c in members if certs[c]["residual"] is not None]
        feas2 = [certs[c]["c_norm"] ** 2 for c in members]
        certs[gid] = {"mean_residual_sq_at_iota": float(np.mean(res2)) if res2 else None,
                      "mean_feasibility_sq_at_iota": float(np.mean(feas2)),
                      "max_feasibility_sq_at_iota": float(np.max(feas2))}
    return {"plan_digest": plan.digest, "cells": cells, "fit_window": list(window), "slopes": slopes,
            "envelopes": envelopes, "monitor_tallies": tallies, "terminal_certificates": certs}


# --- trace I/O and reports -------------------------------------------------------

_INT_COLUMNS = {"k", "step_cond", "samples", "grad_evals"}


def parse_trace_csv(text: str) -> dict:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ReportError("empty trace file") from None
    if tuple(header) != TRACE_COLUMNS:
        raise ReportError(f"trace header {header} does not match the documented columns")
    rows = list(reader)
    cols = {}
    for i, name in enumerate(header):
        vals = [r[i] for r in rows]
        if name == "lemma_verdict":
            cols[name] = vals
        elif name in _INT_COLUMNS:
            cols[name] = np.array([int(v) for v in vals], dtype=np.int64)
        else:
            cols[name] = np.array([float(v) for v in vals], dtype=float)
    return cols


def _cell_from_filename(name: str):
    stem = name[:-4] if name.endswith(".csv") else name
    parts = stem.split("__")
    if len(parts) != 3 or not parts[2].startswith("s") or not parts[2][1:].isdigit():
        return None
    return parts[0], parts[1], int(parts[2][1:])


def report(trace_dir, out_dir=None, formats=FORMATS, log=print) -> dict:
    """Fits, envelopes and plot-ready CSV from a directory written by a run."""
    base = Path(trace_dir)
    if not base.is_dir():
        raise ReportError(f"{base} is not a directory")
    traces = base / "traces" if (base / "traces").is_dir() else base
    root = traces.parent if traces.name == "traces" else base
    manifest_path = root / "manifest.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8")) if manifest_path.exists() else None
    found = {}
    for path in sorted(traces.glob("*.csv")):
        parsed = _cell_from_filename(path.name)
        if parsed is not None:
            found[path.name[:-4]] = (parsed, path)
    if manifest is not None:
        expected = [c["cell"] for c in manifest["cells"] if "error" not in c]
        absent = [c for c in expected if c not in found]
        if absent:
            raise ReportError(f"missing traces for cells: {', '.join(absent)}")
    if not found:
        raise ReportError(f"no trace files found in {traces}")
    groups = {}
    K = 0
    for cid, ((p, a, s), path) in sorted(found.items()):
        cols = parse_trace_csv(path.read_text(encoding="utf-8"))
        groups.setdefault(group_id(p, a), {})[s] = cols
        K = max(K, int(cols["k"][-1]))
    window = tuple(manifest["fit_window"]) if manifest is not None else (100, K)
    slopes, envelopes = aggregate_groups(groups, window)
    out = Path(out_dir) if out_dir else root / "report"
    (out / "plots").mkdir(parents=True, exist_ok=True)
    for gid, seeds in sorted(groups.items()):
        write_plot_csv(out / "plots" / f"{gid}.csv", seeds)
    result = {"fit_window": list(window), "slopes": slopes, "envelopes": envelopes}
    if "json" in formats:
        _write_json(out / "report.json", result)
    if "csv" in formats:
        write_slopes_csv(out / "slopes.csv", slopes)
    log(format_slopes_table(slopes))
    return result


def write_plot_csv(path, seeds: dict):
    """Long format (k, quantity, seed, value); seed is 'mean' or 'max' for aggregates."""
    order = sorted(seeds)
    k = seeds[order[0]]["k"]
    series = {
        "feasibility_sq": np.array([2.0 * seeds[s]["h"] for s in order]),
        "exact_residual_sq": np.array([seeds[s]["resid_exact"] ** 2 for s in order]),
    }
    lines = ["k,quantity,seed,value"]
    for q, mat in series.items():
        for j, s in enumerate(order):
            lines.extend(f"{int(k[i])},{q},{s},{mat[j, i]!r}" for i in range(len(k)))
        mean = mat.mean(axis=0)
        lines.extend(f"{int(k[i])},{q},mean,{mean[i]!r}" for i in range(len(k)))
        if q == "feasibility_sq":
            mx = mat.max(axis=0)
            lines.extend(f"{int(k[i])},{q},max,{mx[i]!r}" for i in range(len(k)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_slopes_csv(path, slopes: dict):
    lines = ["group,quantity,slope,intercept,r_squared,k_min,k_max,rows,truncated"]
    for gid in sorted(slopes):
        for q, fit in slopes[gid].items():
            if not isinstance(fit, dict):
                continue
            if "error" in fit:
                lines.append(f"{gid},{q},nan,nan,nan,nan,nan,0,false")
                continue
            lo, hi = fit["window"]
            lines.append(f"{gid},{q},{fit['slope']!r},{fit['intercept']!r},{fit['r_squared']!r},{lo!r},{hi!r},"
                         f"{fit['rows']},{str(fit['truncated']).lower()}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def format_slopes_table(slopes: dict) -> str:
    out = [f"{'group':<28} {'quantity':<26} {'slope':>9} {'r2':>7} {'rows':>6}"]
    for gid in sorted(slopes):
        for q, fit in slopes[gid].items():
            if not isinstance(fit, dict):
                continue
            if "error" in fit:
                out.append(f"{gid:<28} {q:<26} {'n/a':>9}")
            else:
                out.append(f"{gid:<28} {q:<26} {fit['slope']:>9.4f} {fit['r_squared']:>7.4f} {fit['rows']:>6}")
    return "\n".join(out)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
