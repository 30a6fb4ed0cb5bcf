"""Certificate quantities, per-step monitors, statistical checks and rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import estimators
from .errors import ConfigurationError, InsufficientDataError
from .problem import ProblemInstance
from .rng import SampleContext
from .schedules import ScheduleValues, TheoryConstants, step_threshold

HOLDS = "holds"
VIOLATED = "violated"
NOT_APPLICABLE = "n/a"

QUANTITIES = ("feasibility_sq", "exact_residual_sq", "surrogate")
MIN_FIT_ROWS = 30
MIN_REPLICATES = 2000
SE_MULTIPLIER = 3.0


# --- stationarity -------------------------------------------------------------

@dataclass(frozen=True)
class StationarityReport:
    k: int
    feasibility: float
    exact_residual: Optional[float]
    surrogate_bound: Optional[float]

    @property
    def dominated(self) -> Optional[bool]:
        if self.exact_residual is None or self.surrogate_bound is None:
            return None
        return self.exact_residual**2 <= self.surrogate_bound


def penalty_gradient_residual(problem: ProblemInstance, x, rho: float, mixed: bool = False) -> Optional[float]:
    """dist(0, grad f(x) + rho grad c(x) c(x) + N_X(x)); None without an exact gradient."""
    if problem.mean_gradient is None:
        return None
    r = problem.penalty_residual(x, mixed)
    v = problem.mean_gradient(x) + rho * problem.penalty_jac_t(x, r, mixed)
    return problem.feasible_set.normal_cone_distance(x, v)


def smoothness_for(problem: ProblemInstance, algorithm: str) -> Optional[float]:
    c = problem.constants
    return c.L_bar_nabla_f if algorithm == "alg1" else c.L_nabla_f


def surrogate_bound(problem: ProblemInstance, x, x_next, g, values: ScheduleValues, L_hat: float) -> Optional[float]:
    """3 (eta^-2 + (L_hat + rho L)^2) ||x+ - x||^2 + 3 ||g - grad f(x)||^2."""
    if problem.mean_gradient is None or L_hat is None:
        return None
    dx = x_next - x
    err = g - problem.mean_gradient(x)
    coef = values.eta**-2 + (L_hat + values.rho * problem.constants.L) ** 2
    return 3.0 * coef * float(dx @ dx) + 3.0 * float(err @ err)


def stationarity_report(problem: ProblemInstance, k: int, x, x_next, g, values: ScheduleValues,
                        algorithm: str = "alg2", mixed: bool = False) -> StationarityReport:
    """Exact residual at x_{k+1} with rho_k, and the step-k surrogate bound.

    ``feasibility`` is ||c(x_{k+1})||, the point the residual is taken at.
    """
    x = problem.check_point(x)
    x_next = problem.check_point(x_next)
    feas = float(np.linalg.norm(problem.penalty_residual(x_next, mixed)))
    exact = penalty_gradient_residual(problem, x_next, values.rho, mixed)
    surrogate = surrogate_bound(problem, x, x_next, np.asarray(g, dtype=float), values,
                                smoothness_for(problem, algorithm))
    return StationarityReport(k=k, feasibility=feas, exact_residual=exact, surrogate_bound=surrogate)


# --- descent monitor ----------------------------------------------------------

class MonitorVerdict(NamedTuple):
    status: str
    lhs: float
    rhs: float


def lemma_sides(h_k: float, h_k1: float, values: ScheduleValues, consts) -> tuple:
    """Both sides of the per-step feasibility descent inequality."""
    re = values.rho * values.eta
    lhs = h_k1 + 2.0 ** (consts.theta - 2.0) * consts.gamma**2 * re * h_k1**consts.theta
    rhs = h_k + consts.L_f**2 * values.eta / (2.0 * values.rho)
    return lhs, rhs


def lemma_monitor_rec(problem: Optional[ProblemInstance], h_k: float, h_k1: float, values: ScheduleValues,
                      consts=None) -> MonitorVerdict:
    """Check h+ + 2^(theta-2) gamma^2 rho eta h+^theta <= h + L_f^2 eta / (2 rho).

    Only applicable when rho eta <= (sqrt 5 - 1)/(2 L).  Never raises.
    """
    consts = consts if consts is not None else problem.constants
    lhs, rhs = lemma_sides(h_k, h_k1, values, consts)
    if not values.rho * values.eta <= step_threshold(consts.L):
        return MonitorVerdict(NOT_APPLICABLE, lhs, rhs)
    return MonitorVerdict(HOLDS if lhs <= rhs else VIOLATED, lhs, rhs)


@dataclass
class MonitorTally:
    holds: int = 0
    violated: int = 0
    not_applicable: int = 0
    violations: list = field(default_factory=list)

    MAX_KEPT = 20

    def add(self, k: int, verdict: MonitorVerdict):
        if verdict.status == HOLDS:
            self.holds += 1
        elif verdict.status == VIOLATED:
            self.violated += 1
            if len(self.violations) < self.MAX_KEPT:
                self.violations.append({"k": k, "lhs": verdict.lhs, "rhs": verdict.rhs})
        else:
            self.not_applicable += 1

    @property
    def applicable(self) -> int:
        return self.holds + self.violated

    def merge(self, other: "MonitorTally"):
        self.holds += other.holds
        self.violated += other.violated
        self.not_applicable += other.not_applicable
        room = self.MAX_KEPT - len(self.violations)
        self.violations.extend(other.violations[:max(room, 0)])

    def as_dict(self) -> dict:
        return {"holds": self.holds, "violated": self.violated, "not_applicable": self.not_applicable,
                "violations": list(self.violations)}


# --- variance recursion --------------------------------------------------------

@dataclass(frozen=True)
class GDistribution:
    """Law of g_k in a replicate check: trunc(grad f(x_k) + scale * N(0, I/n))."""

    scale: float = 0.0


@dataclass(frozen=True)
class VarianceVerdict:
    kind: str
    holds: bool
    lhs_mean: float
    rhs_mean: float
    diff_mean: float
    diff_se: float
    replicates: int


def variance_replicate_check(problem: ProblemInstance, x_k, x_k1, g_dist: GDistribution, alpha: float,
                             replicates: int, kind: str = "recursive", ctx: Optional[SampleContext] = None,
                             radius: Optional[float] = None) -> VarianceVerdict:
    """Monte Carlo check of the one-step error recursion of either estimator.

    Each replicate draws g_k, then one estimator update at x_{k+1}; the
    per-replicate gap rhs - lhs is averaged and the inequality is accepted
    when mean + 3 SE >= 0.  ``radius`` overrides the truncation radius
    (used for planted faults).
    """
    if replicates < MIN_REPLICATES:
        raise ConfigurationError(f"variance check needs at least {MIN_REPLICATES} replicates, got {replicates}")
    if problem.mean_gradient is None:
        raise ConfigurationError("variance check needs an exact gradient")
    if kind not in estimators.KINDS:
        raise ConfigurationError(f"unknown estimator kind {kind!r}")
    if not 0.0 < alpha <= 1.0:
        raise ConfigurationError("alpha must lie in (0, 1]")
    ctx = ctx if ctx is not None else SampleContext(0, 4)
    c = problem.constants
    x_k = problem.check_point(x_k)
    x_k1 = problem.check_point(x_k1)
    grad_k = problem.mean_gradient(x_k)
    grad_k1 = problem.mean_gradient(x_k1)
    dx2 = float((x_k1 - x_k) @ (x_k1 - x_k))
    radius = c.L_f if radius is None else radius
    lhs = np.empty(replicates)
    rhs = np.empty(replicates)
    for i in range(replicates):
        g = grad_k + g_dist.scale * ctx.standard_normal(problem.n) / math.sqrt(problem.n)
        g = estimators.truncate_ball(g, radius)
        err0 = float((g - grad_k) @ (g - grad_k))
        state = estimators.EstimatorState(kind=kind, g=g, truncation_radius=radius, last_x=x_k)
        state = estimators.update(state, problem, x_k1, alpha, ctx)
        err1 = state.g - grad_k1
        lhs[i] = err1 @ err1
        if kind == "recursive":
            rhs[i] = (1.0 - alpha) ** 2 * err0 + 6.0 * c.L_bar_nabla_f**2 * dx2 + 3.0 * c.sigma**2 * alpha**2
        else:
            rhs[i] = (1.0 - alpha) * err0 + c.L_nabla_f**2 * dx2 / alpha + c.sigma**2 * alpha**2
    diff = rhs - lhs
    mean = float(diff.mean())
    se = float(diff.std(ddof=1) / math.sqrt(replicates))
    return VarianceVerdict(kind=kind, holds=mean + SE_MULTIPLIER * se >= 0.0, lhs_mean=float(lhs.mean()),
                           rhs_mean=float(rhs.mean()), diff_mean=mean, diff_se=se, replicates=replicates)


# --- rate fitting ---------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    quantity: str
    slope: float
    intercept: float
    r_squared: float
    window: tuple
    rows: int
    truncated: bool = False

    def as_dict(self) -> dict:
        return {"quantity": self.quantity, "slope": self.slope, "intercept": self.intercept,
                "r_squared": self.r_squared, "window": list(self.window), "rows": self.rows,
                "truncated": self.truncated}


def fit_power_law(k, q, window, quantity: str = "custom") -> RateFit:
    """OLS of log q on log k over rows with k in the closed window.

    If some values in the window are nonpositive (exact feasibility reached),
    the fit uses the positive prefix and is flagged ``truncated``.
    """
    k = np.asarray(k, dtype=float)
    q = np.asarray(q, dtype=float)
    lo, hi = window
    sel = (k >= lo) & (k <= hi)
    k, q = k[sel], q[sel]
    truncated = False
    bad = np.flatnonzero(~(q > 0))
    if bad.size:
        k, q = k[: bad[0]], q[: bad[0]]
        truncated = True
    if k.size < MIN_FIT_ROWS:
        raise InsufficientDataError(f"rate fit needs {MIN_FIT_ROWS} positive rows in window, found {k.size}")
    lk, lq = np.log(k), np.log(q)
    slope, intercept = np.polyfit(lk, lq, 1)
    resid = lq - (slope * lk + intercept)
    ss_tot = float(np.sum((lq - lq.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(resid @ resid) / ss_tot
    return RateFit(quantity=quantity, slope=float(slope), intercept=float(intercept),
                   r_squared=min(max(r2, 0.0), 1.0), window=(lo, hi), rows=int(k.size), truncated=truncated)


def quantity_column(record, quantity: str) -> np.ndarray:
    if quantity == "feasibility_sq":
        return 2.0 * record.column("h")
    if quantity == "exact_residual_sq":
        return record.column("resid_exact") ** 2
    if quantity == "surrogate":
        return record.column("resid_surrogate")
    raise ConfigurationError(f"unknown quantity {quantity!r}; expected one of {', '.join(QUANTITIES)}")


def fit_rate(record, quantity: str, window) -> RateFit:
    return fit_power_law(record.column("k"), quantity_column(record, quantity), window, quantity)


def default_fit_window(theory: Optional[TheoryConstants], K: int):
    """(k_min, K) excluding the burn-in; second item flags pre-asymptotic fits."""
    if theory is not None and theory.reachable and 2 * theory.K_tilde < K:
        return (max(100, 2 * theory.K_tilde), K), False
    return (100, K), True


# --- error-bound falsifier --------------------------------------------------------

@dataclass(frozen=True)
class FalsifierReport:
    samples: int
    evaluated: int
    min_ratio: float
    argmin: Optional[np.ndarray]
    gamma: float
    flagged: bool


def error_bound_falsifier(problem: ProblemInstance, samples: int, ctx: SampleContext,
                          mixed: bool = False, rtol: float = 1e-12) -> FalsifierReport:
    """Search X for points where dist(0, grad c c + N_X) < gamma ||c||^theta.

    Points with ||c|| below 1e-150 are skipped (the ratio is undefined there).
    A heuristic: it can refute a certificate but never prove one.
    """
    X = problem.feasible_set
    theta = problem.constants.theta
    gamma = problem.constants.gamma
    pts = X.sample_members(ctx.generator, samples)
    best, arg, used = math.inf, None, 0
    for x in pts:
        r = problem.penalty_residual(x, mixed)
        rn = float(np.linalg.norm(r))
        if not rn > 1e-150:
            continue
        used += 1
        d = X.normal_cone_distance(x, problem.penalty_jac_t(x, r, mixed))
        ratio = d / rn**theta
        if ratio < best:
            best, arg = ratio, x.copy()
    return FalsifierReport(samples=samples, evaluated=used, min_ratio=best, argmin=arg, gamma=gamma,
                           flagged=best < gamma * (1.0 - rtol))
