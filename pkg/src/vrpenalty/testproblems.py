"""Synthetic test problems with analytically certified constants.

Three constraint families are built from a text descriptor:

linear-eq
    c(x) = A x - b on X = R^n with A = U diag(s) V^T, s geometrically spaced
    from ``sigma_max`` down to ``sigma_max / condition_number``.  The error
    bound holds with theta = 1 and gamma = sigma_min(A) because
    ||A^T r|| >= sigma_min(A) ||r|| for a full-row-rank A.

sphere
    c(x) = ||x||^2 - 1 on the ball X = B(d e_1, R0) with d > R0 (defaults
    d = 1, R0 = 0.5).  Interior points give ||grad c c|| = 2||x|| |c| with
    ||x|| >= d - R0.  On the boundary the normal cone removes the radial
    part of 2 x c only when that part points inward, which happens for
    outward normals u with u_1 strictly between -R0/d and
    (1 - d^2 - R0^2)/(2 d R0); the tangential remainder is
    2 d sqrt(1 - u_1^2) |c|.  Hence gamma = min(2 (d - R0), 2 d sqrt(1 - t^2))
    with t the larger endpoint magnitude, and theta = 1.  (Centered at the
    origin the bound fails near x = 0, where grad c c vanishes while
    |c| = 1.)

power
    scalar c(x) = x_1^p (p even) on the box [-bound, bound]^n.  Then
    grad c c = p x_1^(2p-1) e_1, and |c|^theta = |x_1|^(2p-1) for
    theta = 2 - 1/p, so the bound holds with gamma = p.  At x_1 = +-bound the
    normal cone points the same way as grad c c, so nothing cancels.

Objectives are separable pseudo-Huber bowls (bounded gradient on R^n) or a
regularized Rosenbrock function (bounded sets only).  Noise is additive
N(0, sigma^2/n I) clipped radially at 6 sigma, which keeps the mean at zero
and the second moment at most sigma^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Union

import numpy as np

from .errors import CertificationError, ConfigurationError
from .problem import FeasibleSet, InequalityConstraint, ProblemInstance, SmoothnessConstants

FAMILIES = ("linear-eq", "sphere", "power")
OBJECTIVES = ("quadratic", "rosenbrock-regularized")
NOISE_CLIP = 6.0

_COMMON_KEYS = {"family", "n", "m", "noise_sigma", "seed", "objective", "tail", "rosen_beta", "rosen_reg"}
_FAMILY_KEYS = {
    "linear-eq": {"condition_number", "sigma_max", "offset_scale"},
    "sphere": {"center_offset", "radius"},
    "power": {"p", "bound"},
}


# --- objectives -----------------------------------------------------------

@dataclass(frozen=True)
class Objective:
    """Deterministic part of the objective with its certified constants."""

    name: str
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    L_f: float
    L_nabla_f: float
    lower_bound: Optional[float] = None


def pseudo_huber_objective(weights, anchor, tail: float = 3.0) -> Objective:
    """f(x) = sum_i w_i t^2 (sqrt(1 + ((x_i - a_i)/t)^2) - 1).

    Quadratic near the anchor, linear in the tails, so ||grad f|| <= t ||w||
    on all of R^n and the Hessian is diagonal with entries in (0, w_i].
    """
    w = np.asarray(weights, dtype=float).copy()
    a = np.asarray(anchor, dtype=float).copy()
    t = float(tail)
    if w.shape != a.shape or np.any(w <= 0) or not t > 0:
        raise ConfigurationError("pseudo-Huber objective needs positive weights and tail")
    t2 = t * t

    def value(x):
        u = (x - a) / t
        return float(np.sum(w * t2 * (np.sqrt(1.0 + u * u) - 1.0)))

    def grad(x):
        d = x - a
        return w * d / np.sqrt(1.0 + d * d / t2)

    return Objective("quadratic", value, grad, L_f=t * float(np.linalg.norm(w)),
                     L_nabla_f=float(np.max(w)), lower_bound=0.0)


def rosenbrock_objective(n: int, radius: float, beta: float = 10.0, reg: float = 0.1) -> Objective:
    """Chained Rosenbrock plus (reg/2)||x||^2, certified on {max_i |x_i| <= radius}."""
    if not math.isfinite(radius):
        raise ConfigurationError("rosenbrock-regularized needs a bounded feasible set")
    R = float(radius)

    def value(x):
        head, tail_ = x[:-1], x[1:]
        return float(np.sum(beta * (tail_ - head**2) ** 2 + (1.0 - head) ** 2) + 0.5 * reg * (x @ x))

    def grad(x):
        gr = reg * x
        head, tail_ = x[:-1], x[1:]
        coupling = tail_ - head**2
        gr[:-1] += -2.0 * (1.0 - head) - 4.0 * beta * head * coupling
        gr[1:] += 2.0 * beta * coupling
        return gr

    # per-coordinate gradient bound, then Gershgorin on the tridiagonal Hessian
    if n == 1:
        per_coord = reg * R
        hess_row = reg
    else:
        per_coord = 2.0 * (1.0 + R) + 4.0 * beta * R * (R + R * R) + 2.0 * beta * (R + R * R) + reg * R
        hess_row = 2.0 + beta * (12.0 * R * R + 4.0 * R) + 2.0 * beta + reg + 8.0 * beta * R
    return Objective("rosenbrock-regularized", value, grad, L_f=math.sqrt(n) * per_coord,
                     L_nabla_f=hess_row, lower_bound=0.0)


def plain_quadratic_objective(weights, center=None, L_f: float = math.inf) -> Objective:
    """f(x) = sum_i w_i (x_i - center_i)^2.

    The gradient is unbounded on R^n; ``L_f`` must be supplied by the caller
    when a finite bound is known on the relevant region.
    """
    w = np.asarray(weights, dtype=float).copy()
    c = np.zeros_like(w) if center is None else np.asarray(center, dtype=float).copy()

    def value(x):
        d = x - c
        return float(np.sum(w * d * d))

    def grad(x):
        return 2.0 * w * (x - c)

    return Objective("plain-quadratic", value, grad, L_f=float(L_f),
                     L_nabla_f=2.0 * float(np.max(np.abs(w))), lower_bound=0.0 if np.all(w >= 0) else None)


def linear_objective(direction) -> Objective:
    """f(x) = <w, x>."""
    w = np.asarray(direction, dtype=float).copy()

    def value(x):
        return float(w @ x)

    def grad(x):
        return w.copy()

    return Objective("linear", value, grad, L_f=float(np.linalg.norm(w)), L_nabla_f=0.0)


# --- noise ----------------------------------------------------------------

class ClippedGaussianNoise:
    """z ~ N(0, sigma^2/n I), rescaled onto the 6 sigma sphere when longer."""

    def __init__(self, n: int, sigma: float):
        if not sigma >= 0 or not math.isfinite(sigma):
            raise ConfigurationError("noise_sigma must be finite and >= 0")
        self.n = n
        self.sigma = float(sigma)
        self._scale = self.sigma / math.sqrt(n)
        self._clip = NOISE_CLIP * self.sigma

    def draw(self, ctx):
        if self.sigma == 0.0:
            return None
        z = ctx.standard_normal(self.n) * self._scale
        nz = math.sqrt(z @ z)
        if nz > self._clip:
            z *= self._clip / nz
        return z


def _assemble(n, m, objective, noise, constraint, jac_t, feasible_set, *, L_c, C_c, L_nabla_c,
              gamma, theta, name, metadata, inequality=None):
    grad = objective.grad

    def sample_grad(x, xi):
        if xi is None:
            return grad(x)
        return grad(x) + xi

    lower = objective.lower_bound
    constants = SmoothnessConstants(
        L_f=objective.L_f, L_c=L_c, C_c=C_c, L_nabla_c=L_nabla_c, sigma=noise.sigma,
        gamma=gamma, theta=theta,
        # additive noise: sampled gradient differences equal true ones
        L_bar_nabla_f=objective.L_nabla_f, L_nabla_f=objective.L_nabla_f,
        Q1_star=lower,
    )
    return ProblemInstance(
        n=n, m=m, draw_sample=noise.draw, sample_grad=sample_grad, constraint=constraint,
        jac_t=jac_t, feasible_set=feasible_set, constants=constants, mean_gradient=grad,
        objective_value=objective.value, inequality=inequality, name=name, metadata=metadata,
    )


# --- families -------------------------------------------------------------

def linear_problem(A, b, objective: Objective, noise_sigma: float = 0.0,
                   inequality=None,
                   name: str = "linear-eq", metadata: Optional[Mapping] = None) -> ProblemInstance:
    """c(x) = A x - b (optionally with G x - h <= 0 given as ``inequality=(G, h)``).

    X = R^n.  gamma is sigma_min of the stacked constraint matrix; a
    rank-deficient stack cannot be certified.  C_c is infinite, which is
    harmless because the constraints are affine (L_nabla_c = 0).
    """
    G = h = None
    if inequality is not None:
        G = np.atleast_2d(np.asarray(inequality[0], dtype=float))
        h = np.asarray(inequality[1], dtype=float).reshape(G.shape[0])
    A = np.asarray(A, dtype=float)
    if A.size == 0 and G is not None:
        A = np.zeros((0, G.shape[1]))
    A = np.atleast_2d(A)
    m, n = A.shape
    b = np.asarray(b, dtype=float).reshape(m)
    feasible_set = FeasibleSet.whole(n)
    stack = A
    ineq = None
    if G is not None:
        stack = np.vstack([A, G])
        ineq = InequalityConstraint(m=G.shape[0], value=lambda x: G @ x - h, jac_t=lambda x, v: G.T @ v)
    if stack.shape[0] == 0:
        raise ConfigurationError("linear problem needs at least one constraint row")
    sv = np.linalg.svd(stack, compute_uv=False)
    tol = max(stack.shape) * np.finfo(float).eps * sv[0]
    if stack.shape[0] > n or sv[-1] <= tol:
        raise CertificationError("constraint matrix is not of full row rank; error bound cannot be certified")
    gamma = float(sv[-1])
    sigma_max = float(sv[0])
    AT = A.T.copy()

    def constraint(x):
        return A @ x - b

    def jac_t(x, v):
        return AT @ v

    return _assemble(
        n, m, objective, ClippedGaussianNoise(n, noise_sigma), constraint, jac_t, feasible_set,
        L_c=sigma_max, C_c=math.inf, L_nabla_c=0.0, gamma=gamma, theta=1.0, name=name,
        metadata=dict(metadata or {}), inequality=ineq,
    )


def random_linear_problem(n: int, m: int, rng: np.random.Generator, objective_name: str = "quadratic",
                          condition_number: float = 2.0, sigma_max: float = 1.0, offset_scale: float = 0.3,
                          noise_sigma: float = 0.0, tail: float = 3.0, metadata=None) -> ProblemInstance:
    if not 1 <= m <= n:
        raise ConfigurationError("linear-eq needs 1 <= m <= n")
    if not condition_number >= 1 or not sigma_max > 0:
        raise ConfigurationError("linear-eq needs condition_number >= 1 and sigma_max > 0")
    U, _ = np.linalg.qr(rng.standard_normal((m, m)))
    V, _ = np.linalg.qr(rng.standard_normal((n, m)))
    s = np.geomspace(sigma_max, sigma_max / condition_number, m)
    A = U @ np.diag(s) @ V.T
    b = A @ (offset_scale * rng.standard_normal(n))
    if objective_name != "quadratic":
        raise ConfigurationError(f"objective {objective_name!r} needs a bounded feasible set; linear-eq uses R^n")
    objective = pseudo_huber_objective(rng.uniform(1.0, 2.0, n), offset_scale * rng.standard_normal(n), tail)
    return linear_problem(A, b, objective, noise_sigma=noise_sigma, metadata=metadata)


def sphere_gamma(center_offset: float, radius: float) -> float:
    """Error-bound modulus of ||x||^2 - 1 on B(d e_1, R0)."""
    d, r0 = float(center_offset), float(radius)
    if not d > r0 > 0:
        raise CertificationError("sphere family needs center_offset > radius > 0")
    # u = outward normal at a boundary point; with u_1 its first coordinate,
    # <x, u> < 0 iff u_1 < t1 and ||x|| < 1 iff u_1 < t2.  The normal cone
    # cancels the radial part exactly when u_1 lies strictly between them,
    # leaving a tangential residual of 2 d sqrt(1 - u_1^2) |c|.
    t1 = -r0 / d
    t2 = (1.0 - d * d - r0 * r0) / (2.0 * d * r0)
    interior = 2.0 * (d - r0)
    worst = min(1.0, max(t1 * t1, t2 * t2))
    return min(interior, 2.0 * d * math.sqrt(1.0 - worst))


def sphere_problem(n: int, objective: Objective, noise_sigma: float = 0.0, center_offset: float = 1.0,
                   radius: float = 0.5, metadata=None) -> ProblemInstance:
    gamma = sphere_gamma(center_offset, radius)
    if not gamma > 0:
        raise CertificationError("sphere geometry gives a nonpositive error-bound modulus")
    center = np.zeros(n)
    center[0] = center_offset
    X = FeasibleSet.ball(center, radius)
    far, near = center_offset + radius, center_offset - radius

    def constraint(x):
        return np.array([x @ x - 1.0])

    def jac_t(x, v):
        return 2.0 * v[0] * x

    return _assemble(
        n, 1, objective, ClippedGaussianNoise(n, noise_sigma), constraint, jac_t, X,
        L_c=2.0 * far, C_c=max(abs(far * far - 1.0), abs(near * near - 1.0)), L_nabla_c=2.0,
        gamma=gamma, theta=1.0, name="sphere", metadata=dict(metadata or {}),
    )


def power_problem(n: int, objective: Objective, p: int = 2, bound: float = 1.0, noise_sigma: float = 0.0,
                  metadata=None) -> ProblemInstance:
    if p < 2 or p % 2:
        raise ConfigurationError("power family needs an even exponent p >= 2")
    if not bound > 0:
        raise ConfigurationError("power family needs bound > 0")
    X = FeasibleSet.box(-bound * np.ones(n), bound * np.ones(n))

    def constraint(x):
        return np.array([x[0] ** p])

    def jac_t(x, v):
        out = np.zeros(n)
        out[0] = p * x[0] ** (p - 1) * v[0]
        return out

    return _assemble(
        n, 1, objective, ClippedGaussianNoise(n, noise_sigma), constraint, jac_t, X,
        L_c=p * bound ** (p - 1), C_c=bound**p, L_nabla_c=p * (p - 1) * bound ** (p - 2),
        gamma=float(p), theta=2.0 - 1.0 / p, name="power", metadata=dict(metadata or {}),
    )


# --- descriptors ----------------------------------------------------------

def parse_descriptor(text: Union[str, Mapping]) -> dict:
    """Parse ``key=value`` pairs separated by whitespace, newlines, ';' or ','.

    Lines starting with '#' are ignored.  Values stay strings.
    """
    if isinstance(text, Mapping):
        return {str(k).strip(): str(v).strip() for k, v in text.items()}
    out = {}
    for line in str(text).splitlines():
        line = line.split("#", 1)[0]
        for token in line.replace(";", " ").replace(",", " ").split():
            if "=" not in token:
                raise ConfigurationError(f"descriptor token {token!r} is not key=value")
            key, value = token.split("=", 1)
            key = key.strip()
            if key in out:
                raise ConfigurationError(f"descriptor key {key!r} given twice")
            out[key] = value.strip()
    return out


def _num(desc, key, default, cast=float):
    raw = desc.get(key)
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError:
        raise ConfigurationError(f"descriptor key {key!r}: cannot parse {raw!r}") from None


def make_test_problem(descriptor, seed: Optional[int] = None) -> ProblemInstance:
    """Build a certified instance from a descriptor.

    ``seed`` overrides the descriptor's ``seed`` key; it drives the random
    construction (matrices, anchors, weights) only, never the sample noise.
    """
    desc = parse_descriptor(descriptor)
    family = desc.get("family")
    if family not in FAMILIES:
        raise ConfigurationError(f"unknown problem family {family!r}; expected one of {', '.join(FAMILIES)}")
    unknown = set(desc) - _COMMON_KEYS - _FAMILY_KEYS[family]
    if unknown:
        raise ConfigurationError(f"unknown descriptor keys for {family}: {', '.join(sorted(unknown))}")
    objective_name = desc.get("objective", "quadratic")
    if objective_name not in OBJECTIVES:
        raise ConfigurationError(f"unknown objective {objective_name!r}")
    n = _num(desc, "n", None, int)
    if n is None or n <= 0:
        raise ConfigurationError("descriptor needs a positive integer n")
    instance_seed = seed if seed is not None else _num(desc, "seed", 0, int)
    if instance_seed < 0:
        raise ConfigurationError("seed must be nonnegative")
    noise_sigma = _num(desc, "noise_sigma", 0.0)
    tail = _num(desc, "tail", 3.0)
    rng = np.random.default_rng(instance_seed)
    meta = dict(desc)
    meta["seed"] = str(instance_seed)

    if family == "linear-eq":
        m = _num(desc, "m", None, int)
        if m is None:
            raise ConfigurationError("linear-eq descriptor needs m")
        return random_linear_problem(
            n, m, rng, objective_name,
            condition_number=_num(desc, "condition_number", 2.0),
            sigma_max=_num(desc, "sigma_max", 1.0),
            offset_scale=_num(desc, "offset_scale", 0.3),
            noise_sigma=noise_sigma, tail=tail, metadata=meta,
        )

    if _num(desc, "m", 1, int) != 1:
        raise ConfigurationError(f"{family} family has exactly one constraint (m=1)")
    if family == "sphere":
        d, r0 = _num(desc, "center_offset", 1.0), _num(desc, "radius", 0.5)
        X_max = d + r0
    else:
        bound = _num(desc, "bound", 1.0)
        X_max = bound
    if objective_name == "quadratic":
        objective = pseudo_huber_objective(rng.uniform(1.0, 2.0, n), 0.3 * rng.standard_normal(n), tail)
    else:
        objective = rosenbrock_objective(n, X_max, beta=_num(desc, "rosen_beta", 10.0),
                                         reg=_num(desc, "rosen_reg", 0.1))
    if family == "sphere":
        return sphere_problem(n, objective, noise_sigma, center_offset=d, radius=r0, metadata=meta)
    return power_problem(n, objective, p=_num(desc, "p", 2, int), bound=bound, noise_sigma=noise_sigma,
                         metadata=meta)


def describe_constants(problem: ProblemInstance) -> str:
    """One ``key=value`` line per certified constant."""
    c = problem.constants
    rows = [
        ("name", problem.name), ("n", problem.n), ("m", problem.m),
        ("feasible_set", problem.feasible_set.kind),
        ("L_f", c.L_f), ("L_c", c.L_c), ("C_c", c.C_c), ("L_nabla_c", c.L_nabla_c), ("L", c.L),
        ("L_bar_nabla_f", c.L_bar_nabla_f), ("L_nabla_f", c.L_nabla_f), ("sigma", c.sigma),
        ("gamma", c.gamma), ("theta", c.theta), ("Q1_star", c.Q1_star),
    ]
    return "\n".join(f"{k}={_fmt(v)}" for k, v in rows)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def scalar_quadratic_problem(weight: float = 1.0, target: float = 1.0, L_f: Optional[float] = None,
                             noise_sigma: float = 0.0, scalar_callbacks: bool = True) -> ProblemInstance:
    """min w x^2 s.t. x - target = 0 on X = R.

    grad f = 2 w x is unbounded on R, so ``L_f`` defaults to 4 |w| max(1, |target|),
    the gradient bound on [-2 max(1, |target|), 2 max(1, |target|)].  Runs started
    at 0 stay between 0 and the target, so the declared bound covers the whole
    trajectory (the tests assert this).  All callbacks accept plain floats.
    """
    w, t = float(weight), float(target)
    if L_f is None:
        L_f = 4.0 * abs(w) * max(1.0, abs(t))
    two_w = 2.0 * w
    sigma = float(noise_sigma)
    if not sigma >= 0:
        raise ConfigurationError("noise_sigma must be >= 0")
    clip = NOISE_CLIP * sigma

    def draw(ctx):
        if sigma == 0.0:
            return None
        z = ctx.standard_normal() * sigma
        return min(max(z, -clip), clip)

    def grad(x):
        return two_w * x

    def sample_grad(x, xi):
        if xi is None:
            return two_w * x
        return two_w * x + xi

    def value(x):
        return float(w * x[0] * x[0])

    def constraint(x):
        return x - t

    def jac_t(x, v):
        return v

    constants = SmoothnessConstants(L_f=float(L_f), L_c=1.0, C_c=math.inf, L_nabla_c=0.0, sigma=sigma,
                                    gamma=1.0, theta=1.0, L_bar_nabla_f=abs(two_w), L_nabla_f=abs(two_w),
                                    Q1_star=0.0 if w >= 0 else None)
    return ProblemInstance(
        n=1, m=1, draw_sample=draw, sample_grad=sample_grad, constraint=constraint, jac_t=jac_t,
        feasible_set=FeasibleSet.whole(1), constants=constants, mean_gradient=grad, objective_value=value,
        name="scalar-quadratic", metadata={"weight": w, "target": t}, scalar_callbacks=scalar_callbacks,
    )
