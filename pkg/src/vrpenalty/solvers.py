"""Single-loop penalty methods with truncated momentum estimators.

Both algorithms iterate

    G_k     = g_k + rho_k grad c(x_k) c(x_k)
    x_{k+1} = P_X(x_k - eta_k G_k)

and differ only in how g_{k+1} is formed: ``alg1`` uses recursive momentum
(one sample evaluated at x_{k+1} and x_k), ``alg2`` uses Polyak averaging.

:func:`solver_step` is the readable reference step built on
:mod:`vrpenalty.estimators`.  :func:`run` executes the same arithmetic in an
inlined loop (the per-step cost is dominated by call overhead for small
problems) and is checked against :func:`solver_step` bit for bit in the tests.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from . import estimators, faults
from .diagnostics import (HOLDS, NOT_APPLICABLE, VIOLATED, MonitorTally, MonitorVerdict,
                          penalty_gradient_residual, stationarity_report)
from .errors import ConfigurationError, ContractError, DivergenceError, DomainError
from .problem import ProblemInstance
from .rng import STREAM_ESTIMATOR, STREAM_SELECTION, SampleContext
from .schedules import ScheduleFamily, ScheduleValues, schedule_arrays, step_threshold

ALGORITHMS = ("alg1", "alg2")
MONITORS = frozenset({"lemma", "stationarity"})
TRACE_COLUMNS = ("k", "h", "c_norm", "resid_exact", "resid_surrogate", "rho", "eta", "alpha",
                 "step_cond", "lemma_verdict", "g_norm", "samples", "grad_evals")
DENSE_TRACE = 1000
TRACE_RATIO = 1.01
_UINT64_MAX = 2**64 - 1


def estimator_kind(algorithm: str) -> str:
    return "recursive" if algorithm == "alg1" else "polyak"


@dataclass(frozen=True)
class RunConfig:
    """One solver run.  ``trace_stride=None`` selects the default grid
    (every k up to 1000, then geometric with ratio 1.01, always ending at K)."""

    algorithm: str = "alg2"
    schedule: Optional[ScheduleFamily] = None
    max_iterations: int = 1000
    epsilon: float = 1e-2
    seed: int = 0
    trace_stride: Optional[int] = None
    monitors: frozenset = MONITORS
    x1: Any = None
    truncation_radius: Optional[float] = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; expected alg1 or alg2")
        if self.schedule is None:
            default = ScheduleFamily.alg1() if self.algorithm == "alg1" else ScheduleFamily.alg2()
            object.__setattr__(self, "schedule", default)
        if self.schedule.algorithm != self.algorithm:
            raise ConfigurationError(f"schedule {self.schedule.kind} does not belong to {self.algorithm}")
        if isinstance(self.max_iterations, bool) or int(self.max_iterations) != self.max_iterations \
                or self.max_iterations < 2:
            raise ConfigurationError("max_iterations must be an integer >= 2")
        object.__setattr__(self, "max_iterations", int(self.max_iterations))
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if not 0 <= int(self.seed) <= _UINT64_MAX:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if self.trace_stride is not None and (int(self.trace_stride) != self.trace_stride or self.trace_stride < 1):
            raise ConfigurationError("trace_stride must be a positive integer")
        unknown = set(self.monitors) - MONITORS
        if unknown:
            raise ConfigurationError(f"unknown monitors: {', '.join(sorted(unknown))}")
        object.__setattr__(self, "monitors", frozenset(self.monitors))
        if self.truncation_radius is not None and not self.truncation_radius > 0:
            raise ConfigurationError("truncation_radius must be positive")

    def validate_against(self, problem: ProblemInstance):
        c = problem.constants
        if self.algorithm == "alg1" and c.L_bar_nabla_f is None:
            raise ConfigurationError("alg1 needs the average-smoothness constant L_bar_nabla_f")
        if self.algorithm == "alg2" and c.L_nabla_f is None:
            raise ConfigurationError("alg2 needs the smoothness constant L_nabla_f")
        if self.x1 is not None:
            x1 = problem.check_point(self.x1)
            if not problem.feasible_set.contains(x1):
                raise ConfigurationError("initial point is not in X")


def trace_grid(K: int, stride: Optional[int] = None) -> np.ndarray:
    """Indices k recorded in the trace, strictly increasing and ending at K."""
    if stride is not None:
        ks = set(range(stride, K + 1, stride))
        ks.update((1, K))
        return np.array(sorted(ks), dtype=np.int64)
    ks = list(range(1, min(K, DENSE_TRACE) + 1))
    v = float(DENSE_TRACE)
    while True:
        v *= TRACE_RATIO
        k = math.ceil(v)
        if k > K:
            break
        if k > ks[-1]:
            ks.append(k)
    if ks[-1] != K:
        ks.append(K)
    return np.array(ks, dtype=np.int64)


# --- reference step -------------------------------------------------------------

@dataclass
class SolverState:
    k: int
    x: np.ndarray
    estimator: estimators.EstimatorState
    schedule: ScheduleFamily
    G: Optional[np.ndarray] = None
    constraint_eval_count: int = 0

    @property
    def sample_count(self) -> int:
        return self.estimator.samples

    @property
    def grad_eval_count(self) -> int:
        return self.estimator.grad_evals


def combined_direction(problem: ProblemInstance, x, g, rho: float, mixed: bool = False):
    """g + rho grad c(x) c(x) (positive part for inequalities in mixed mode)."""
    r = problem.penalty_residual(x, mixed)
    return g + rho * problem.penalty_jac_t(x, r, mixed)


def initial_point(problem: ProblemInstance, config: RunConfig) -> np.ndarray:
    if config.x1 is None:
        return problem.feasible_set.project(np.zeros(problem.n)).copy()
    return np.array(config.x1, dtype=float)


def init_state(problem: ProblemInstance, config: RunConfig, ctx: SampleContext) -> SolverState:
    config.validate_against(problem)
    x1 = initial_point(problem, config)
    est = estimators.init_estimator(estimator_kind(config.algorithm), problem, x1, ctx, config.truncation_radius)
    return SolverState(k=1, x=x1, estimator=est, schedule=config.schedule)


def solver_step(state: SolverState, problem: ProblemInstance, values: ScheduleValues, ctx: SampleContext,
                mixed: bool = False) -> SolverState:
    """One iteration: direction, projected step, then the estimator update."""
    if values.k != state.k:
        raise ContractError(f"schedule values for k={values.k} passed at k={state.k}")
    G = combined_direction(problem, state.x, state.estimator.g, values.rho, mixed)
    x_next = problem.feasible_set.project(state.x - values.eta * G)
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError(f"non-finite iterate produced at k={state.k}", k=state.k, x=state.x.copy())
    est = estimators.update(state.estimator, problem, x_next, values.alpha, ctx)
    if not np.all(np.isfinite(est.g)):
        raise DivergenceError(f"non-finite gradient estimate at k={state.k}", k=state.k, x=state.x.copy())
    return SolverState(k=state.k + 1, x=x_next, estimator=est, schedule=state.schedule, G=G,
                       constraint_eval_count=state.constraint_eval_count + 1)


def select_iterate(K: int, ctx: SampleContext) -> int:
    """Uniform draw from {ceil(K/2) + 1, ..., K}."""
    if isinstance(K, bool) or int(K) != K or K < 2:
        raise DomainError(f"iterate selection needs an integer horizon K >= 2, got {K!r}")
    K = int(K)
    lo = (K + 1) // 2 + 1
    return int(ctx.integers(lo, K + 1))


# --- run record -----------------------------------------------------------------

@dataclass
class TerminalCertificate:
    iota: int
    x: list
    h: float
    c_norm: float
    residual: Optional[float]
    multiplier: list
    rho: float
    epsilon: float

    @property
    def within_epsilon(self) -> bool:
        return self.c_norm <= self.epsilon

    def as_dict(self) -> dict:
        return {"iota": self.iota, "x": self.x, "h": self.h, "c_norm": self.c_norm, "residual": self.residual,
                "multiplier": self.multiplier, "rho": self.rho, "epsilon": self.epsilon,
                "within_epsilon": self.within_epsilon}


@dataclass
class RunRecord:
    problem_name: str
    algorithm: str
    schedule: str
    seed: int
    K: int
    columns: dict
    terminal: TerminalCertificate
    counters: dict
    monitor: MonitorTally
    max_g_norm: float
    boundedness_violations: int
    counter_mismatches: int
    surrogate_checks: int
    surrogate_violations: int
    membership_violations: int
    wall_time: float = field(default=0.0, compare=False)

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def rows(self) -> int:
        return len(self.columns["k"])

    def to_csv(self) -> str:
        cols = [self.columns[c] for c in TRACE_COLUMNS]
        lines = [",".join(TRACE_COLUMNS)]
        for i in range(self.rows):
            lines.append(",".join(_cell(col[i]) for col in cols))
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        """Everything except the trace rows and wall time (both reported separately)."""
        return {
            "problem": self.problem_name, "algorithm": self.algorithm, "schedule": self.schedule,
            "seed": self.seed, "K": self.K, "rows": self.rows, "terminal": self.terminal.as_dict(),
            "counters": dict(self.counters), "monitor": self.monitor.as_dict(), "max_g_norm": self.max_g_norm,
            "boundedness_violations": self.boundedness_violations,
            "counter_mismatches": self.counter_mismatches, "surrogate_checks": self.surrogate_checks,
            "surrogate_violations": self.surrogate_violations,
            "membership_violations": self.membership_violations,
        }


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


# --- main loop --------------------------------------------------------------------

def _sq_array(v):
    return v @ v


def _sq_scalar(v):
    return v * v


def _truncate_scalar(v, radius):
    # same arithmetic as estimators.truncate_ball on a length-1 array
    nv = math.sqrt(v * v)
    if nv <= radius:
        return v
    out = v * (radius / nv)
    while math.sqrt(out * out) > radius:
        out = out * estimators._SHRINK
    return out


def _interval_projector(X):
    if X.kind == "whole-space":
        return None
    if X.kind == "box":
        lo, hi = float(X.lower[0]), float(X.upper[0])
    else:
        lo, hi = float(X.center[0] - X.radius), float(X.center[0] + X.radius)

    def project(v):
        return min(max(v, lo), hi)

    return project


def run(problem: ProblemInstance, config: RunConfig) -> RunRecord:
    """Execute K iterations and return the trace plus terminal certificate."""
    return _execute(problem, config, mixed=False)


def run_mixed(problem: ProblemInstance, config: RunConfig) -> RunRecord:
    """Same loop with h = (||c_E||^2 + ||[c_I]_+||^2)/2 and the matching direction.

    Without inequality constraints this is identical to :func:`run`.
    """
    return _execute(problem, config, mixed=True)


def _execute(problem: ProblemInstance, config: RunConfig, mixed: bool) -> RunRecord:
    config.validate_against(problem)
    K = config.max_iterations
    consts = problem.constants
    algorithm = config.algorithm
    recursive = algorithm == "alg1"
    X = problem.feasible_set

    est_ctx = SampleContext(config.seed, STREAM_ESTIMATOR)
    iota = select_iterate(K, SampleContext(config.seed, STREAM_SELECTION))
    rho_arr, eta_arr, alpha_arr = schedule_arrays(config.schedule, np.arange(1, K + 1))
    R, E, A = rho_arr.tolist(), eta_arr.tolist(), alpha_arr.tolist()
    grid = trace_grid(K, config.trace_stride).tolist()
    grid.append(K + 1)  # sentinel

    radius = consts.L_f if config.truncation_radius is None else float(config.truncation_radius)
    if faults.active("truncation-radius"):
        radius = 2.0 * radius
    flip_threshold = faults.active("threshold-sign")
    L_f = consts.L_f
    L_f2 = L_f**2
    theta = consts.theta
    coef = 2.0 ** (theta - 2.0) * consts.gamma**2
    threshold = step_threshold(consts.L)
    lemma_on = "lemma" in config.monitors
    stationarity_on = "stationarity" in config.monitors

    scalar = problem.scalar_callbacks and not (mixed and problem.inequality is not None)
    sq = _sq_scalar if scalar else _sq_array
    if scalar:
        project = _interval_projector(X)
        truncate = _truncate_scalar
    else:
        project = None if X.kind == "whole-space" else X.project
        truncate = estimators.truncate_ball
    use_mixed = mixed and problem.inequality is not None
    if use_mixed:
        def resid(x):
            return problem.penalty_residual(x, True)

        def jac(x, r):
            return problem.penalty_jac_t(x, r, True)
    else:
        resid, jac = problem.constraint, problem.jac_t
    draw, sgrad = problem.draw_sample, problem.sample_grad

    def as_vec(v):
        return np.array([v], dtype=float) if scalar else v

    # initialization (k = 1)
    x1 = initial_point(problem, config)
    g1 = estimators.truncate_ball(problem.sample_grad(x1, draw(est_ctx)), radius)
    if scalar:
        x, g = float(x1[0]), float(g1[0])
    else:
        x, g = x1, g1
    c = resid(x)
    h = 0.5 * sq(c)
    samples, grad_evals, constraint_evals = 1, 1, 1
    per_iter_grads = 2 if recursive else 1

    tally = MonitorTally()
    n_holds = n_na = 0
    cols = {name: [] for name in TRACE_COLUMNS}
    g_norm = math.sqrt(sq(g))
    max_g = g_norm
    bound_viol = int(g_norm > L_f)
    counter_bad = 0
    sur_checks = sur_viol = member_viol = 0
    iota_state = None
    next_trace = grid[0]
    gi = 0

    t0 = time.perf_counter()
    for k in range(1, K + 1):
        rho = R[k - 1]
        eta = E[k - 1]
        alpha = A[k - 1]
        G = g + rho * jac(x, c)
        xn = x - eta * G
        if project is not None:
            xn = project(xn)
        xi = draw(est_ctx)
        if recursive:
            at_next = sgrad(xn, xi)
            at_last = sgrad(x, xi)
            gn = truncate(at_next + (1.0 - alpha) * (g - at_last), radius)
        else:
            gn = truncate((1.0 - alpha) * g + alpha * sgrad(xn, xi), radius)
        cn = resid(xn)
        hn = 0.5 * sq(cn)
        gn_norm = math.sqrt(sq(gn))
        if not (math.isfinite(hn) and math.isfinite(gn_norm) and math.isfinite(sq(xn))):
            raise DivergenceError(f"non-finite state produced at k={k}", k=k, x=np.array(as_vec(x), dtype=float))
        samples += 1
        grad_evals += per_iter_grads
        constraint_evals += 1
        if samples != k + 1 or grad_evals != per_iter_grads * k + 1:
            counter_bad += 1
        if gn_norm > L_f:
            bound_viol += 1
        if gn_norm > max_g:
            max_g = gn_norm

        verdict = NOT_APPLICABLE
        re = rho * eta
        if lemma_on:
            applicable = re >= threshold if flip_threshold else re <= threshold
            lhs = hn + coef * re * hn**theta
            rhs = h + L_f2 * eta / (2.0 * rho)
            if not applicable:
                n_na += 1
            elif lhs <= rhs:
                verdict = HOLDS
                n_holds += 1
            else:
                verdict = VIOLATED
                tally.add(k, MonitorVerdict(VIOLATED, lhs, rhs))

        if k == next_trace:
            xa, xna, ga = as_vec(x), as_vec(xn), as_vec(g)
            exact = surrogate = math.nan
            if stationarity_on:
                rep = stationarity_report(problem, k, xa, xna, ga, ScheduleValues(k, rho, eta, alpha),
                                          algorithm, use_mixed)
                if rep.exact_residual is not None:
                    exact = rep.exact_residual
                if rep.surrogate_bound is not None:
                    surrogate = rep.surrogate_bound
                if rep.dominated is not None:
                    sur_checks += 1
                    sur_viol += not rep.dominated
            if not X.contains(xna):
                member_viol += 1
            cols["k"].append(k)
            cols["h"].append(h)
            cols["c_norm"].append(math.sqrt(2.0 * h))
            cols["resid_exact"].append(exact)
            cols["resid_surrogate"].append(surrogate)
            cols["rho"].append(rho)
            cols["eta"].append(eta)
            cols["alpha"].append(alpha)
            cols["step_cond"].append(int(re <= threshold))
            cols["lemma_verdict"].append(verdict)
            cols["g_norm"].append(g_norm)
            cols["samples"].append(samples - 1)
            cols["grad_evals"].append(grad_evals - per_iter_grads)
            gi += 1
            next_trace = grid[gi]

        if k + 1 == iota:
            iota_state = (np.array(as_vec(xn), dtype=float), np.array(as_vec(cn), dtype=float), hn, rho)

        x, g, c, h, g_norm = xn, gn, cn, hn, gn_norm
    wall = time.perf_counter() - t0
    tally.holds += n_holds
    tally.not_applicable += n_na

    x_iota, c_iota, h_iota, rho_prev = iota_state
    terminal = TerminalCertificate(
        iota=iota, x=x_iota.tolist(), h=float(h_iota), c_norm=float(np.linalg.norm(c_iota)),
        residual=penalty_gradient_residual(problem, x_iota, rho_prev, use_mixed),
        multiplier=(rho_prev * c_iota).tolist(), rho=float(rho_prev), epsilon=float(config.epsilon),
    )
    columns = {name: np.asarray(vals, dtype=float) for name, vals in cols.items() if name != "lemma_verdict"}
    for name in ("k", "step_cond", "samples", "grad_evals"):
        columns[name] = np.asarray(cols[name], dtype=np.int64)
    columns["lemma_verdict"] = list(cols["lemma_verdict"])
    return RunRecord(
        problem_name=problem.name, algorithm=algorithm, schedule=config.schedule.label(), seed=int(config.seed),
        K=K, columns=columns, terminal=terminal,
        counters={"samples": samples, "grad_evals": grad_evals, "constraint_evals": constraint_evals},
        monitor=tally, max_g_norm=float(max_g), boundedness_violations=bound_viol,
        counter_mismatches=counter_bad, surrogate_checks=sur_checks, surrogate_violations=sur_viol,
        membership_violations=member_viol, wall_time=wall,
    )
