"""Parameter schedules (penalty, step size, momentum) and burn-in constants.

Three schedule families are supported:

=================  ===============  ===========================  ============
kind               rho_k            eta_k                        alpha_k
=================  ===============  ===========================  ============
alg1-general       k^nu             k^-nu / (4 ln(k+2))          k^-2nu
alg2-subquadratic  k^(theta/4)      k^-1/2 / ln(k+2)             k^-1/2
alg2-general       k^1/2            k^-1/2 / (4 ln(k+2))         k^-1/2
=================  ===============  ===========================  ============

with nu = min(theta_hat / (theta_hat + 2), 1/2).  All logarithms are natural.
Schedules are pure functions of k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DomainError
from .problem import SmoothnessConstants

KINDS = ("alg1-general", "alg2-subquadratic", "alg2-general")
STEP_THRESHOLD_NUMERATOR = (math.sqrt(5.0) - 1.0) / 2.0
# largest float whose ceiling still fits an int64 comfortably
_LOG_REACHABLE = math.log(2.0**62)


@dataclass(frozen=True)
class ScheduleFamily:
    kind: str
    theta_hat: Optional[float] = None
    theta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.kind == "alg1-general":
            th = 1.0 if self.theta_hat is None else float(self.theta_hat)
            if not th >= 1 or not math.isfinite(th):
                raise ConfigurationError("theta_hat must be a finite number >= 1")
            object.__setattr__(self, "theta_hat", th)
        if self.kind == "alg2-subquadratic":
            if self.theta is None or not 1 <= self.theta < 2:
                raise ConfigurationError("alg2-subquadratic needs theta in [1, 2)")
            object.__setattr__(self, "theta", float(self.theta))

    @classmethod
    def alg1(cls, theta_hat: float = 1.0) -> "ScheduleFamily":
        return cls("alg1-general", theta_hat=theta_hat)

    @classmethod
    def alg2_subquadratic(cls, theta: float) -> "ScheduleFamily":
        return cls("alg2-subquadratic", theta=theta)

    @classmethod
    def alg2(cls) -> "ScheduleFamily":
        return cls("alg2-general")

    @property
    def nu(self) -> Optional[float]:
        if self.kind != "alg1-general":
            return None
        return min(self.theta_hat / (self.theta_hat + 2.0), 0.5)

    @property
    def algorithm(self) -> str:
        return "alg1" if self.kind == "alg1-general" else "alg2"

    def label(self) -> str:
        if self.kind == "alg1-general":
            return f"alg1-general(theta_hat={self.theta_hat:g})"
        if self.kind == "alg2-subquadratic":
            return f"alg2-subquadratic(theta={self.theta:g})"
        return "alg2-general"


@dataclass(frozen=True)
class ScheduleValues:
    k: int
    rho: float
    eta: float
    alpha: float


def schedule_arrays(family: ScheduleFamily, k):
    """Vectorized (rho, eta, alpha) for an array of indices k >= 1."""
    k = np.asarray(k, dtype=float)
    if np.any(k < 1) or np.any(k != np.floor(k)):
        raise DomainError("schedule index k must be an integer >= 1")
    log_term = np.log(k + 2.0)
    if family.kind == "alg1-general":
        nu = family.nu
        rho = k**nu
        eta = k ** (-nu) / (4.0 * log_term)
        alpha = k ** (-2.0 * nu)
    elif family.kind == "alg2-subquadratic":
        root = np.sqrt(k)
        rho = k ** (family.theta / 4.0)
        eta = (1.0 / root) / log_term
        alpha = 1.0 / root
    else:
        root = np.sqrt(k)
        rho = root
        eta = (1.0 / root) / (4.0 * log_term)
        alpha = 1.0 / root
    return rho, eta, alpha


def schedule_at(family: ScheduleFamily, k: int) -> ScheduleValues:
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise DomainError(f"schedule index must be an integer >= 1, got {k!r}")
    rho, eta, alpha = schedule_arrays(family, np.array([k]))
    return ScheduleValues(k=int(k), rho=float(rho[0]), eta=float(eta[0]), alpha=float(alpha[0]))


def step_threshold(L: float) -> float:
    """(sqrt(5) - 1) / (2 L); infinite when L = 0."""
    if L == 0:
        return math.inf
    return STEP_THRESHOLD_NUMERATOR / L


def step_condition_holds(values: ScheduleValues, L: float) -> bool:
    if not L >= 0:
        raise ConfigurationError("L must be nonnegative")
    return values.rho * values.eta <= step_threshold(L)


# --- burn-in constants ------------------------------------------------------

@dataclass(frozen=True)
class TheoryConstants:
    """Burn-in index and feasibility constant for one schedule family.

    ``K_tilde`` is ``None`` when the burn-in exceeds any reachable horizon
    (``reachable`` is then False and ``log_K_tilde`` still holds the exact
    logarithm of the pre-ceiling maximum).
    """

    family: ScheduleFamily
    L: float
    K_tilde: Optional[int]
    log_K_tilde: float
    C: float
    step_condition_threshold: float

    @property
    def reachable(self) -> bool:
        return self.K_tilde is not None

    def feasibility_bound(self, k: float, theta: float) -> float:
        """Sure bound on ||c(x_k)||^2 at the selected index for horizon k >= 2 K_tilde."""
        if self.family.kind == "alg1-general":
            expo = 2.0 * self.family.nu / theta
        elif self.family.kind == "alg2-subquadratic":
            expo = 0.5
        else:
            expo = 1.0 / theta
        return 2.0 * self.C * (k / 2.0) ** (-expo)


def _log_pos(v: float) -> float:
    return math.log(v) if v > 0 else -math.inf


def _log_power(base: float, expo: float) -> float:
    # log(base^expo) for base >= 0; 0^expo contributes nothing to a max
    return expo * math.log(base) if base > 0 else -math.inf


def _log_sum_exp2(a: float, b: float) -> float:
    # log(e^a + e^b) without overflow
    hi, lo = max(a, b), min(a, b)
    return hi + math.log1p(math.exp(lo - hi))


def _log_K_terms(family: ScheduleFamily, c: SmoothnessConstants):
    theta, gamma, L = c.theta, c.gamma, c.L
    if family.kind == "alg1-general":
        if c.L_bar_nabla_f is None:
            raise ConfigurationError("alg1-general burn-in needs L_bar_nabla_f")
        nu, Lb = family.nu, c.L_bar_nabla_f
        tail = _log_sum_exp2(2.0 * theta, math.log(2.0))
        inner = -1.0 - 2.0 * math.log(gamma) + (6.0 - theta) * math.log(2.0) + math.log(tail)
        return [
            _log_power(2.0 * Lb, 1.0 / nu),
            6.0 * 2.0 ** (nu / 2.0) * Lb * Lb,
            2.0 * L,
            2.0 * theta,
            2.0 * theta * inner,
        ]
    if c.L_nabla_f is None:
        raise ConfigurationError(f"{family.kind} burn-in needs L_nabla_f")
    Ln = c.L_nabla_f
    if family.kind == "alg2-subquadratic":
        if theta >= 2:
            raise ConfigurationError("alg2-subquadratic constants need theta < 2")
        expo = 4.0 / (2.0 - theta)
        inner = (-1.0 - 2.0 * math.log(gamma) + (2.0 - theta / 2.0) * math.log(2.0)
                 + math.log(math.log(math.e**2 + 2.0)))
        return [2.0, _log_pos(64.0 * Ln * Ln), 8.0 * Ln * Ln, _log_power(8.0 * L, expo), expo * inner]
    tail = _log_sum_exp2(2.0 * theta, math.log(2.0))
    inner = -1.0 - 2.0 * math.log(gamma) + (6.0 - theta) * math.log(2.0) + math.log(tail)
    return [_log_pos(4.0 * Ln * Ln), 2.0 * Ln * Ln, 2.0 * L, 2.0 * theta, 2.0 * theta * inner]


def theory_constants(family: ScheduleFamily, consts: SmoothnessConstants) -> TheoryConstants:
    """Burn-in K~ and feasibility constant C for ``family`` on ``consts``.

    The maximum is taken in log space, so huge exponentials are handled
    exactly; a burn-in beyond 2^62 is reported as unreachable with C
    evaluated through its logarithm as well.
    """
    log_max = max(_log_K_terms(family, consts))
    if log_max <= _LOG_REACHABLE:
        K_tilde = max(1, math.ceil(math.exp(log_max)))
        log_K = math.log(K_tilde)
    else:
        K_tilde = None
        log_K = log_max
    theta, gamma = consts.theta, consts.gamma
    if family.kind == "alg1-general":
        k_expo = 2.0 * family.nu / theta
        third = 2.0 ** (3.0 - theta) * consts.L_f**2 / gamma**2
    elif family.kind == "alg2-subquadratic":
        k_expo = 0.5
        third = 2.0 ** (2.0 - theta / 2.0) * consts.L_f**2 / gamma**2
    else:
        k_expo = 1.0 / theta
        third = 2.0 ** (3.0 - theta) * consts.L_f**2 / gamma**2
    if consts.C_c == 0:
        second = 0.0
    else:
        log_second = k_expo * log_K + 2.0 * math.log(consts.C_c) - math.log(2.0)
        second = math.exp(log_second) if log_second < 709.0 else math.inf
    C = max(1.0, second, third)
    return TheoryConstants(family=family, L=consts.L, K_tilde=K_tilde, log_K_tilde=log_K, C=C,
                           step_condition_threshold=step_threshold(consts.L))


def predicted_rates(family: ScheduleFamily, theta: float) -> dict:
    """Exponents r with quantity = O~(k^-r) for feasibility^2 and stationarity^2."""
    if family.kind == "alg1-general":
        nu = family.nu
        feas = 2.0 * nu / theta
        stat = min(2.0 * nu / theta, 1.0 - nu, 1.0 - 2.0 * nu + 2.0 * nu / theta)
    elif family.kind == "alg2-subquadratic":
        feas, stat = 0.5, 0.5
    else:
        feas = 1.0 / theta
        stat = min(0.5, 1.0 / theta)
    return {"feasibility_sq": feas, "exact_residual_sq": stat}
