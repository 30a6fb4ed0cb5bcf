"""Truncated momentum gradient estimators.

Both kinds keep ``g`` inside the closed ball of radius ``truncation_radius``
(normally L_f, the bound on the true gradient).  The recursive kind reuses
one sample at two consecutive points; the Polyak kind averages.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .problem import ProblemInstance, sample_gradient
from .rng import SampleContext

log = logging.getLogger(__name__)

KINDS = ("recursive", "polyak")
_SHRINK = 1.0 - 2.0**-52


def truncate_ball(v, radius: float):
    """Projection onto {u : ||u|| <= radius}; boundary points are kept."""
    if not radius > 0:
        raise ConfigurationError(f"truncation radius must be positive, got {radius}")
    nv = math.sqrt(v @ v)
    if nv <= radius:
        return v
    out = v * (radius / nv)
    # rounding can leave the scaled vector one ulp outside
    while math.sqrt(out @ out) > radius:
        out = out * _SHRINK
    return out


@dataclass
class EstimatorState:
    kind: str
    g: np.ndarray
    truncation_radius: float
    last_x: np.ndarray
    samples: int = 0
    grad_evals: int = 0

    @property
    def g_norm(self) -> float:
        return math.sqrt(self.g @ self.g)


def _check_alpha(alpha):
    if not 0.0 < alpha <= 1.0:
        raise ConfigurationError(f"momentum weight must lie in (0, 1], got {alpha}")


def init_estimator(kind: str, problem: ProblemInstance, x1, ctx: SampleContext,
                   truncation_radius=None) -> EstimatorState:
    """g_1 = truncated sample gradient at x_1.

    ``truncation_radius`` defaults to the certified L_f.  A smaller value is
    accepted with a warning: truncation then binds more often and the
    guarantees no longer apply.
    """
    if kind not in KINDS:
        raise ConfigurationError(f"unknown estimator kind {kind!r}")
    L_f = problem.constants.L_f
    radius = L_f if truncation_radius is None else float(truncation_radius)
    if radius < L_f:
        log.warning("truncation radius %g is below the certified gradient bound %g", radius, L_f)
    x1 = problem.check_point(x1)
    g = truncate_ball(sample_gradient(problem, x1, ctx), radius)
    return EstimatorState(kind=kind, g=g, truncation_radius=radius, last_x=x1.copy(), samples=1, grad_evals=1)


def update_recursive(state: EstimatorState, problem: ProblemInstance, x_next, alpha: float,
                     ctx: SampleContext) -> EstimatorState:
    """g+ = trunc(grad~(x+, xi) + (1 - alpha) (g - grad~(x, xi))) with one shared xi."""
    if state.kind != "recursive":
        raise ConfigurationError("update_recursive needs a recursive estimator")
    _check_alpha(alpha)
    x_next = problem.check_point(x_next)
    xi = problem.draw_sample(ctx)
    # x_{k+1} first, then x_k, both with the same draw
    at_next = problem.sample_grad(x_next, xi)
    at_last = problem.sample_grad(state.last_x, xi)
    g = truncate_ball(at_next + (1.0 - alpha) * (state.g - at_last), state.truncation_radius)
    return EstimatorState(kind=state.kind, g=g, truncation_radius=state.truncation_radius,
                          last_x=x_next.copy(), samples=state.samples + 1, grad_evals=state.grad_evals + 2)


def update_polyak(state: EstimatorState, problem: ProblemInstance, x_next, alpha: float,
                  ctx: SampleContext) -> EstimatorState:
    """g+ = trunc((1 - alpha) g + alpha grad~(x+, xi))."""
    if state.kind != "polyak":
        raise ConfigurationError("update_polyak needs a Polyak estimator")
    _check_alpha(alpha)
    x_next = problem.check_point(x_next)
    xi = problem.draw_sample(ctx)
    sample = problem.sample_grad(x_next, xi)
    g = truncate_ball((1.0 - alpha) * state.g + alpha * sample, state.truncation_radius)
    return EstimatorState(kind=state.kind, g=g, truncation_radius=state.truncation_radius,
                          last_x=x_next.copy(), samples=state.samples + 1, grad_evals=state.grad_evals + 1)


def update(state: EstimatorState, problem: ProblemInstance, x_next, alpha: float, ctx: SampleContext):
    if state.kind == "recursive":
        return update_recursive(state, problem, x_next, alpha, ctx)
    return update_polyak(state, problem, x_next, alpha, ctx)
