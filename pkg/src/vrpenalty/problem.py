"""Problem abstraction: stochastic objective, deterministic constraints, feasible set.

A :class:`ProblemInstance` is what a solver consumes.  Solvers only see the
stochastic oracle (``draw_sample`` + ``sample_grad``) and the constraint
evaluators; the exact mean gradient is carried separately for diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

import numpy as np

from .errors import ConfigurationError, ContractError, InputError, PreconditionError
from .rng import SampleContext

_MEMBER_RTOL = 1e-12


@dataclass(frozen=True)
class SmoothnessConstants:
    """Certified constants of a problem instance.

    ``L_bar_nabla_f`` (average smoothness of the sampled gradient) is needed
    by the recursive-momentum method, ``L_nabla_f`` by the Polyak-momentum
    method; either may be ``None`` when unknown.
    """

    L_f: float
    L_c: float
    C_c: float
    L_nabla_c: float
    sigma: float
    gamma: float
    theta: float
    L_bar_nabla_f: Optional[float] = None
    L_nabla_f: Optional[float] = None
    Q1_star: Optional[float] = None

    def __post_init__(self):
        for name in ("L_f", "L_c", "C_c", "L_nabla_c", "sigma", "L_bar_nabla_f", "L_nabla_f"):
            value = getattr(self, name)
            if value is None:
                continue
            if math.isnan(value) or value < 0:
                raise ConfigurationError(f"{name} must be nonnegative, got {value}")
        if not self.gamma > 0:
            raise ConfigurationError(f"gamma must be positive, got {self.gamma}")
        if not self.theta >= 1:
            raise ConfigurationError(f"theta must be >= 1, got {self.theta}")
        if not math.isfinite(self.L):
            raise ConfigurationError("L = L_c^2 + C_c * L_nabla_c must be finite")

    @property
    def L(self) -> float:
        """Smoothness constant of h(x) = ||c(x)||^2 / 2 on X."""
        # C_c may be infinite for affine constraints on an unbounded set,
        # where the curvature term vanishes (L_nabla_c = 0).
        curvature = self.C_c * self.L_nabla_c if self.L_nabla_c > 0 else 0.0
        return self.L_c**2 + curvature


class FeasibleSet:
    """Closed convex set with an exact Euclidean projection.

    Build with :meth:`whole`, :meth:`box` or :meth:`ball`.  Box bounds may be
    infinite per coordinate.
    """

    __slots__ = ("kind", "dimension", "lower", "upper", "center", "radius")

    def __init__(self, kind, dimension, lower=None, upper=None, center=None, radius=None):
        self.kind = kind
        self.dimension = int(dimension)
        self.lower = lower
        self.upper = upper
        self.center = center
        self.radius = radius
        if self.dimension <= 0:
            raise ConfigurationError("dimension must be positive")

    @classmethod
    def whole(cls, n: int) -> "FeasibleSet":
        return cls("whole-space", n)

    @classmethod
    def box(cls, lower, upper) -> "FeasibleSet":
        lower = np.asarray(lower, dtype=float).copy()
        upper = np.asarray(upper, dtype=float).copy()
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ConfigurationError("box bounds must be 1-D arrays of equal length")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)) or np.any(lower > upper):
            raise ConfigurationError("box requires lower <= upper componentwise")
        lower.flags.writeable = False
        upper.flags.writeable = False
        return cls("box", lower.size, lower=lower, upper=upper)

    @classmethod
    def ball(cls, center, radius: float) -> "FeasibleSet":
        center = np.asarray(center, dtype=float).copy()
        if center.ndim != 1 or not np.all(np.isfinite(center)):
            raise ConfigurationError("ball center must be a finite 1-D array")
        if not radius > 0 or not math.isfinite(radius):
            raise ConfigurationError("ball radius must be positive and finite")
        center.flags.writeable = False
        return cls("euclidean-ball", center.size, center=center, radius=float(radius))

    @property
    def bounded(self) -> bool:
        if self.kind == "whole-space":
            return False
        if self.kind == "box":
            return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))
        return True

    def max_abs_coordinate(self) -> float:
        """sup over X of max_i |x_i| (inf if unbounded)."""
        if self.kind == "whole-space":
            return math.inf
        if self.kind == "box":
            return float(max(np.max(np.abs(self.lower)), np.max(np.abs(self.upper))))
        return float(np.max(np.abs(self.center)) + self.radius)

    def max_norm(self) -> float:
        """sup over X of ||x|| (inf if unbounded)."""
        if self.kind == "whole-space":
            return math.inf
        if self.kind == "box":
            return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))
        return float(np.linalg.norm(self.center) + self.radius)

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dimension,):
            raise ContractError(f"expected a vector of length {self.dimension}, got shape {v.shape}")
        return v

    def project(self, v):
        """Euclidean projection; no validation (hot path)."""
        if self.kind == "whole-space":
            return v
        if self.kind == "box":
            return np.minimum(np.maximum(v, self.lower), self.upper)
        d = v - self.center
        nd = math.sqrt(d @ d)
        if nd <= self.radius:
            return v
        return self.center + d * (self.radius / nd)

    def contains(self, x, rtol: float = _MEMBER_RTOL) -> bool:
        x = self._check(x)
        if not np.all(np.isfinite(x)):
            return False
        if self.kind == "whole-space":
            return True
        if self.kind == "box":
            slack_lo = rtol * (1.0 + np.abs(np.where(np.isfinite(self.lower), self.lower, 0.0)))
            slack_hi = rtol * (1.0 + np.abs(np.where(np.isfinite(self.upper), self.upper, 0.0)))
            return bool(np.all(x >= self.lower - slack_lo) and np.all(x <= self.upper + slack_hi))
        return bool(np.linalg.norm(x - self.center) <= self.radius * (1.0 + rtol))

    def normal_cone_distance(self, x, v, rtol: float = _MEMBER_RTOL) -> float:
        """dist(0, v + N_X(x)) for a member x."""
        x = self._check(x)
        v = self._check(v)
        if not self.contains(x, rtol):
            raise PreconditionError("normal_cone_distance requires x to be a member of the set")
        if self.kind == "whole-space":
            return float(np.linalg.norm(v))
        if self.kind == "box":
            tol_lo = rtol * (1.0 + np.abs(np.where(np.isfinite(self.lower), self.lower, 0.0)))
            tol_hi = rtol * (1.0 + np.abs(np.where(np.isfinite(self.upper), self.upper, 0.0)))
            at_lower = x <= self.lower + tol_lo
            at_upper = x >= self.upper - tol_hi
            resid = np.abs(v)
            resid = np.where(at_lower, np.maximum(-v, 0.0), resid)
            resid = np.where(at_upper, np.maximum(v, 0.0), resid)
            resid = np.where(at_lower & at_upper, 0.0, resid)
            return float(np.linalg.norm(resid))
        d = x - self.center
        nd = float(np.linalg.norm(d))
        if nd < self.radius * (1.0 - rtol):
            return float(np.linalg.norm(v))
        u = d / nd
        s = float(v @ u)
        if s >= 0.0:
            return float(np.linalg.norm(v))
        return float(np.linalg.norm(v - s * u))

    def sample_members(self, rng: np.random.Generator, count: int, scale: float = 3.0,
                       boundary_fraction: float = 0.25):
        """Random members of X, with a share placed on the boundary.

        Unbounded directions are sampled from N(0, scale^2) around the finite
        bound (or the origin).  Returns an array of shape ``(count, n)``.
        """
        n = self.dimension
        if self.kind == "whole-space":
            return scale * rng.standard_normal((count, n))
        if self.kind == "box":
            lo, hi = self.lower, self.upper
            u = rng.uniform(size=(count, n))
            z = np.abs(rng.standard_normal((count, n))) * scale
            both = np.isfinite(lo) & np.isfinite(hi)
            lo_f, hi_f = np.where(both, lo, 0.0), np.where(both, hi, 0.0)
            pts = np.where(both, lo_f + u * (hi_f - lo_f), 0.0)
            pts = np.where(np.isfinite(lo) & ~np.isfinite(hi), lo + z, pts)
            pts = np.where(~np.isfinite(lo) & np.isfinite(hi), hi - z, pts)
            pts = np.where(~np.isfinite(lo) & ~np.isfinite(hi), scale * rng.standard_normal((count, n)), pts)
            clamp = rng.uniform(size=(count, n)) < boundary_fraction
            side = rng.uniform(size=(count, n)) < 0.5
            target = np.where(side, lo, hi)
            pts = np.where(clamp & np.isfinite(target), target, pts)
            return pts
        d = rng.standard_normal((count, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        radial = rng.uniform(size=(count, 1)) ** (1.0 / n)
        on_boundary = rng.uniform(size=(count, 1)) < boundary_fraction
        radial = np.where(on_boundary, 1.0, radial)
        return self.center + self.radius * radial * d

    def __repr__(self):
        if self.kind == "box":
            return f"FeasibleSet.box(lower={self.lower.tolist()}, upper={self.upper.tolist()})"
        if self.kind == "euclidean-ball":
            return f"FeasibleSet.ball(center={self.center.tolist()}, radius={self.radius})"
        return f"FeasibleSet.whole({self.dimension})"


@dataclass(frozen=True)
class InequalityConstraint:
    """c_I(x) <= 0 with value map and transposed-Jacobian action."""

    m: int
    value: Callable[[np.ndarray], np.ndarray]
    jac_t: Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """min E[f~(x, xi)] s.t. c(x) = 0 (and optionally c_I(x) <= 0), x in X.

    ``draw_sample(ctx)`` draws one xi; ``sample_grad(x, xi)`` evaluates the
    sampled gradient at any point for that xi, so one sample can be reused
    at two points.  ``constraint(x)`` returns c(x) (length m) and
    ``jac_t(x, v)`` returns grad c(x) @ v (length n).

    ``scalar_callbacks`` declares (for n = m = 1) that every callback also
    accepts and returns plain floats, which lets the solver skip array
    overhead in its inner loop.
    """

    n: int
    m: int
    draw_sample: Callable[[SampleContext], Any]
    sample_grad: Callable[[np.ndarray, Any], np.ndarray]
    constraint: Callable[[np.ndarray], np.ndarray]
    jac_t: Callable[[np.ndarray, np.ndarray], np.ndarray]
    feasible_set: FeasibleSet
    constants: SmoothnessConstants
    mean_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    objective_value: Optional[Callable[[np.ndarray], float]] = None
    inequality: Optional[InequalityConstraint] = None
    name: str = "custom"
    metadata: Mapping[str, Any] = field(default_factory=dict)
    scalar_callbacks: bool = False

    def __post_init__(self):
        if self.n <= 0 or self.m < 0:
            raise ConfigurationError("need n > 0 and m >= 0")
        if self.scalar_callbacks and not (self.n == 1 and self.m == 1):
            raise ConfigurationError("scalar callbacks are only meaningful for n = m = 1")
        if self.feasible_set.dimension != self.n:
            raise ConfigurationError("feasible set dimension differs from n")

    def check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ContractError(f"expected a point of length {self.n}, got shape {x.shape}")
        return x

    def penalty_residual(self, x, mixed: bool = False) -> np.ndarray:
        """Residual whose half squared norm is the feasibility measure h.

        Equality-only: c(x).  Mixed: (c_E(x), [c_I(x)]_+).
        """
        c = self.constraint(x)
        if mixed and self.inequality is not None:
            return np.concatenate([c, np.maximum(self.inequality.value(x), 0.0)])
        return c

    def penalty_jac_t(self, x, r, mixed: bool = False) -> np.ndarray:
        """grad c(x) r[:m] (+ grad c_I(x) r[m:] in mixed mode)."""
        if mixed and self.inequality is not None:
            return self.jac_t(x, r[: self.m]) + self.inequality.jac_t(x, r[self.m:])
        return self.jac_t(x, r)


def sample_gradient(problem: ProblemInstance, x, ctx: SampleContext) -> np.ndarray:
    """One stochastic gradient at x from a fresh draw of ``ctx``."""
    x = problem.check_point(x)
    if not problem.feasible_set.contains(x):
        raise PreconditionError("sample_gradient requires x in X")
    return problem.sample_grad(x, problem.draw_sample(ctx))


def eval_constraint(problem: ProblemInstance, x):
    """Return ``(c(x), v -> grad c(x) v)``."""
    x = problem.check_point(x)
    if not np.all(np.isfinite(x)):
        raise InputError("eval_constraint requires a finite point")
    value = np.asarray(problem.constraint(x), dtype=float)
    if value.shape != (problem.m,):
        raise ContractError(f"constraint returned shape {value.shape}, expected ({problem.m},)")

    def jac_t_apply(v):
        v = np.asarray(v, dtype=float)
        if v.shape != (problem.m,):
            raise ContractError(f"expected a multiplier vector of length {problem.m}")
        return problem.jac_t(x, v)

    return value, jac_t_apply


def project_feasible(feasible_set: FeasibleSet, v) -> np.ndarray:
    v = feasible_set._check(v)
    if not np.all(np.isfinite(v)):
        raise InputError("project_feasible requires a finite vector")
    return feasible_set.project(v)


def normal_cone_distance(feasible_set: FeasibleSet, x, v) -> float:
    return feasible_set.normal_cone_distance(x, v)
