"""SDEPCA problem definitions, the built-in examples and numerical assumption checks.

An SDEPCA is

    dx(t) = f(x(t), x([t])) dt + sum_j g_j(x(t), x([t])) dB^j(t),

where ``[t]`` is the floor of ``t``. Coefficient callbacks take ``x`` and the
delayed value ``y`` as arrays of shape ``(..., n)`` and must broadcast over
leading batch dimensions:

* ``drift(x, y)``          -> ``(..., n)``
* ``diffusion(x, y)``      -> ``(..., n, d)``, column ``j`` is ``g_j``
* ``diffusion_jac(x, y)``  -> ``(..., n, n, d)``, ``[..., i, l, j] = d g_{ij} / d x_l``
* ``drift_jac(x, y)``      -> ``(..., n, n)`` (only needed by implicit solvers)

Validators evaluate the assumptions on a bounded box or on random pairs; a
nonpositive return value certifies the inequality at the sampled points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, EvaluationError

__all__ = [
    "SdepcaProblem",
    "AssumptionCertificate",
    "RationalStep",
    "make_example",
    "milstein_products",
    "check_step_condition",
    "check_step_lower_bound",
    "check_drift_growth",
    "check_diffusion_growth",
    "check_commutativity",
    "check_monotone_drift",
    "check_diffusion_lipschitz",
    "check_drift_poly_lipschitz",
    "check_diffusion_curvature",
    "is_commutative",
]

Array = np.ndarray


@dataclass(frozen=True, eq=False)
class SdepcaProblem:
    state_dim: int
    noise_dim: int
    drift: Callable[[Array, Array], Array]
    diffusion: Callable[[Array, Array], Array]
    diffusion_jac: Callable[[Array, Array], Array]
    initial_value: Array
    horizon: float
    drift_jac: Optional[Callable[[Array, Array], Array]] = None
    name: str = "custom"
    # Nonzero when the compiled core has these exact coefficients built in.
    kernel_code: int = 0

    def __post_init__(self):
        if int(self.state_dim) < 1 or int(self.noise_dim) < 1:
            raise ConfigurationError("state_dim and noise_dim must be positive integers")
        x0 = np.array(self.initial_value, dtype=float).reshape(-1)
        if x0.shape != (self.state_dim,):
            raise ConfigurationError(
                f"initial_value has shape {x0.shape}, expected ({self.state_dim},)"
            )
        if not np.all(np.isfinite(x0)):
            raise ConfigurationError("initial_value must be finite")
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ConfigurationError("horizon must be a positive real", key="horizon")
        x0.setflags(write=False)
        object.__setattr__(self, "initial_value", x0)

    def diffusion_col(self, x, y, j: int) -> Array:
        return self.diffusion(x, y)[..., j]


@dataclass(frozen=True)
class RationalStep:
    """The step function ``scale / (1 + |x|^2)``.

    With ``scale=2`` it satisfies the lower bound ``(a|x|^q + b)^-1`` with
    ``a = b = 1/2``, ``q = 2`` with equality.
    """

    scale: float = 2.0
    kernel_code: int = field(default=1, init=False)

    def __call__(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        return self.scale / (1.0 + np.sum(x * x, axis=-1))


@dataclass(frozen=True)
class AssumptionCertificate:
    """Constants claimed for a (problem, step function) pair.

    ``lower_bound`` is ``(a, b, q)`` with ``step_fn(x) >= 1/(a|x|^q + b)``.
    Optional constants are only checked when present.
    """

    step_fn: Callable[[Array], Array]
    alpha: float
    lower_bound: tuple
    growth_const: Optional[float] = None
    diffusion_bounds: Optional[tuple] = None
    monotone_const: Optional[float] = None
    diffusion_lip: Optional[float] = None
    poly_growth: Optional[tuple] = None
    curvature_const: Optional[float] = None
    check_domain: tuple = (-50.0, 50.0)

    def __post_init__(self):
        consts = [self.alpha, *self.lower_bound]
        for opt in (self.growth_const, self.monotone_const, self.diffusion_lip, self.curvature_const):
            if opt is not None:
                consts.append(opt)
        for tup in (self.diffusion_bounds, self.poly_growth):
            if tup is not None:
                consts.extend(tup)
        if len(self.lower_bound) != 3:
            raise ConfigurationError("lower_bound must be a triple (a, b, q)")
        if not all(np.isfinite(c) and c > 0 for c in consts):
            raise ConfigurationError("certificate constants must be finite and strictly positive")
        if self.poly_growth is not None and self.poly_growth[1] < 1:
            raise ConfigurationError("poly_growth exponent gamma must be >= 1")


# -- built-in examples -------------------------------------------------------


def _ex1_drift(x, y):
    return -x * x * x + y


def _ex1_diffusion(x, y):
    return (x + y)[..., None]


def _ex1_diffusion_jac(x, y):
    return np.ones(np.shape(x)[:-1] + (1, 1, 1))


def _cubic_drift_jac(x, y):
    return (-3.0 * x * x)[..., None]


def _ex2_drift(x, y):
    return -x * x * x + x + y


def _ex2_diffusion(x, y):
    return np.stack([5.0 * x + y, 0.5 * x + 0.1 * y], axis=-1)


def _ex2_diffusion_jac(x, y):
    out = np.empty(np.shape(x)[:-1] + (1, 1, 2))
    out[..., 0] = 5.0
    out[..., 1] = 0.5
    return out


def _ex2_drift_jac(x, y):
    return (1.0 - 3.0 * x * x)[..., None]


def _ex3_drift(x, y):
    return -x * x * x + np.sin(y)


def _ex3_diffusion(x, y):
    return np.stack([x + y, -x + y], axis=-1)


def _ex3_diffusion_jac(x, y):
    out = np.empty(np.shape(x)[:-1] + (1, 1, 2))
    out[..., 0] = 1.0
    out[..., 1] = -1.0
    return out


def make_example(example_id: int):
    """Return ``(problem, certificate)`` for built-in example 1, 2 or 3.

    All three are scalar with ``x(0) = 2``, ``T = 2`` and step function
    ``2 / (1 + x^2)``. Certificate constants were chosen by hand and are
    confirmed numerically by the test suite.
    """
    step = RationalStep(2.0)
    common = dict(state_dim=1, initial_value=[2.0], horizon=2.0)
    if example_id == 1:
        problem = SdepcaProblem(
            noise_dim=1,
            drift=_ex1_drift,
            diffusion=_ex1_diffusion,
            diffusion_jac=_ex1_diffusion_jac,
            drift_jac=_cubic_drift_jac,
            name="example1",
            kernel_code=1,
            **common,
        )
        cert = AssumptionCertificate(
            step_fn=step,
            alpha=2.5,
            lower_bound=(0.5, 0.5, 2.0),
            growth_const=1.0,
            diffusion_bounds=(1.0, 1.0),
            monotone_const=1.0,
            diffusion_lip=1.0,
            poly_growth=(1.5, 2.0),
            curvature_const=1.0,
        )
    elif example_id == 2:
        problem = SdepcaProblem(
            noise_dim=2,
            drift=_ex2_drift,
            diffusion=_ex2_diffusion,
            diffusion_jac=_ex2_diffusion_jac,
            drift_jac=_ex2_drift_jac,
            name="example2",
            kernel_code=2,
            **common,
        )
        cert = AssumptionCertificate(
            step_fn=step,
            alpha=2.5,
            lower_bound=(0.5, 0.5, 2.0),
            growth_const=1.5,
            diffusion_bounds=(5.0, 5.0),
            monotone_const=1.5,
            diffusion_lip=6.0,
            poly_growth=(1.5, 2.0),
            curvature_const=1.0,
        )
    elif example_id == 3:
        problem = SdepcaProblem(
            noise_dim=2,
            drift=_ex3_drift,
            diffusion=_ex3_diffusion,
            diffusion_jac=_ex3_diffusion_jac,
            drift_jac=_cubic_drift_jac,
            name="example3",
            kernel_code=3,
            **common,
        )
        cert = AssumptionCertificate(
            step_fn=step,
            alpha=2.5,
            lower_bound=(0.5, 0.5, 2.0),
            growth_const=1.0,
            diffusion_bounds=(1.0, 1.0),
            monotone_const=1.0,
            diffusion_lip=1.0,
            poly_growth=(1.5, 2.0),
            curvature_const=1.0,
        )
    else:
        raise ConfigurationError(f"unknown example id {example_id!r}; expected 1, 2 or 3", key="example")
    return problem, cert


def milstein_products(problem: SdepcaProblem, x, y) -> Array:
    """``L[..., i, j, r] = (D_x g_j . g_r)_i`` evaluated at ``(x, y)``."""
    g = problem.diffusion(x, y)
    jac = problem.diffusion_jac(x, y)
    return np.einsum("...ilj,...lr->...ijr", jac, g)


# -- sampling helpers --------------------------------------------------------


def _box(domain, n):
    lo, hi = domain
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (2 * n,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (2 * n,))
    if np.any(hi < lo):
        raise ConfigurationError("domain upper bound below lower bound")
    return lo, hi


def _grid(domain, n, grid_points):
    if grid_points < 2:
        raise ConfigurationError("grid_points must be >= 2 per axis")
    lo, hi = _box(domain, n)
    axes = [np.linspace(lo[i], hi[i], grid_points) for i in range(2 * n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    return pts[:, :n], pts[:, n:]


def _random_points(domain, n, count, rng):
    if count < 1:
        raise ConfigurationError("sample_count must be >= 1")
    lo, hi = _box(domain, n)
    pts = rng.uniform(lo, hi, size=(count, 2 * n))
    return pts[:, :n], pts[:, n:]


def _finite(values, x, y, what):
    values = np.asarray(values)
    bad = ~np.isfinite(values)
    if bad.any():
        flat = bad.reshape(len(x), -1).any(axis=1)
        i = int(np.argmax(flat))
        point = (x[i].tolist(), y[i].tolist())
        raise EvaluationError(f"{what} is not finite at (x, y) = {point}", point=point)
    return values


def _norm(v):
    return np.sqrt(np.sum(v * v, axis=-1))


# -- validators --------------------------------------------------------------


def check_step_condition(problem, step_fn, alpha, domain=(-50.0, 50.0), grid_points=501) -> float:
    """Max over the grid of ``<x,f> + 0.5 step(x) |f|^2 - alpha (1 + |x|^2 + |y|^2)``."""
    if not alpha > 0:
        raise ConfigurationError("alpha must be positive")
    x, y = _grid(domain, problem.state_dim, grid_points)
    f = _finite(problem.drift(x, y), x, y, "drift")
    dt = _finite(step_fn(x), x, y, "step function")
    lhs = np.sum(x * f, axis=-1) + 0.5 * dt * np.sum(f * f, axis=-1)
    rhs = alpha * (1.0 + np.sum(x * x, axis=-1) + np.sum(y * y, axis=-1))
    return float(np.max(lhs - rhs))


def check_step_lower_bound(step_fn, a, b, q, state_dim=1, domain=(-50.0, 50.0), grid_points=1001) -> float:
    """Max relative shortfall ``(1/(a|x|^q+b) - step(x)) / step(x)`` over a grid in x."""
    lo, hi = domain
    axes = [np.linspace(lo, hi, grid_points)] * state_dim
    mesh = np.meshgrid(*axes, indexing="ij")
    x = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    dt = np.asarray(step_fn(x), dtype=float)
    bound = 1.0 / (a * _norm(x) ** q + b)
    return float(np.max((bound - dt) / dt))


def check_drift_growth(problem, L, domain=(-50.0, 50.0), grid_points=201) -> float:
    """One-sided growth ``<x, f(x,y)> <= L (1 + |x|^2 + |y|^2)``."""
    x, y = _grid(domain, problem.state_dim, grid_points)
    f = _finite(problem.drift(x, y), x, y, "drift")
    return float(np.max(np.sum(x * f, axis=-1) - L * (1.0 + np.sum(x * x, -1) + np.sum(y * y, -1))))


def check_diffusion_growth(problem, K1, K2, domain=(-50.0, 50.0), grid_points=201) -> float:
    """Linear growth of every ``g_j`` and a uniform bound on ``||D_x g_j||``."""
    x, y = _grid(domain, problem.state_dim, grid_points)
    g = _finite(problem.diffusion(x, y), x, y, "diffusion")
    jac = _finite(problem.diffusion_jac(x, y), x, y, "diffusion Jacobian")
    col_norm = np.sqrt(np.sum(g * g, axis=-2))
    growth = col_norm - K1 * (1.0 + _norm(x) + _norm(y))[:, None]
    jac_norm = np.sqrt(np.sum(jac * jac, axis=(-3, -2)))
    return float(max(np.max(growth), np.max(jac_norm - K2)))


def check_commutativity(problem, sample_count=10_000, seed=0, domain=(-10.0, 10.0), points=None) -> float:
    """Max over samples of ``max_{j<r} |D_x g_j g_r - D_x g_r g_j|``.

    Differences within a few ulps of the largest sampled product are rounding
    noise and count as zero, so a commutative problem returns exactly ``0.0``.
    """
    d = problem.noise_dim
    if d == 1:
        return 0.0
    if points is None:
        x, y = _random_points(domain, problem.state_dim, sample_count, np.random.default_rng(seed))
    else:
        x = np.atleast_2d(np.asarray(points[0], dtype=float))
        y = np.atleast_2d(np.asarray(points[1], dtype=float))
    prod = _finite(milstein_products(problem, x, y), x, y, "D_x g_j g_r")
    worst = 0.0
    eps = np.finfo(float).eps
    for j in range(d):
        for r in range(j + 1, d):
            a, b = prod[..., j, r], prod[..., r, j]
            diff = np.abs(a - b)
            diff[diff <= 16 * eps * float(np.max(np.abs(a) + np.abs(b)))] = 0.0
            worst = max(worst, float(np.max(diff)))
    return worst


def is_commutative(problem, sample_count=10_000, seed=0) -> bool:
    return check_commutativity(problem, sample_count, seed) == 0.0


def _pairs(problem, domain, sample_count, seed, pairs):
    n = problem.state_dim
    if pairs is not None:
        return tuple(np.atleast_2d(np.asarray(p, dtype=float)) for p in pairs)
    rng = np.random.default_rng(seed)
    x, y = _random_points(domain, n, sample_count, rng)
    xb, yb = _random_points(domain, n, sample_count, rng)
    return x, y, xb, yb


def check_monotone_drift(problem, L1, domain=(-10.0, 10.0), sample_count=10_000, seed=0, pairs=None) -> float:
    """Max of ``<x-xb, f(x,y)-f(xb,yb)> - L1 (|x-xb|^2 + |y-yb|^2)`` over random pairs."""
    x, y, xb, yb = _pairs(problem, domain, sample_count, seed, pairs)
    df = _finite(problem.drift(x, y), x, y, "drift") - _finite(problem.drift(xb, yb), xb, yb, "drift")
    dx, dy = x - xb, y - yb
    res = np.sum(dx * df, axis=-1) - L1 * (np.sum(dx * dx, -1) + np.sum(dy * dy, -1))
    return float(np.max(res))


def check_diffusion_lipschitz(problem, K3, domain=(-10.0, 10.0), sample_count=10_000, seed=0, pairs=None) -> float:
    x, y, xb, yb = _pairs(problem, domain, sample_count, seed, pairs)
    dg = _finite(problem.diffusion(x, y), x, y, "diffusion") - _finite(problem.diffusion(xb, yb), xb, yb, "diffusion")
    dist = _norm(x - xb) + _norm(y - yb)
    col = np.sqrt(np.sum(dg * dg, axis=-2))
    return float(np.max(col - K3 * dist[:, None]))


def check_drift_poly_lipschitz(problem, L2, gamma, domain=(-10.0, 10.0), sample_count=10_000, seed=0, pairs=None) -> float:
    """Polynomial Lipschitz bound on the drift with exponent ``gamma``."""
    x, y, xb, yb = _pairs(problem, domain, sample_count, seed, pairs)
    df = _finite(problem.drift(x, y), x, y, "drift") - _finite(problem.drift(xb, yb), xb, yb, "drift")
    weight = 1.0 + _norm(x) ** gamma + _norm(y) ** gamma + _norm(xb) ** gamma + _norm(yb) ** gamma
    return float(np.max(_norm(df) - L2 * weight * (_norm(x - xb) + _norm(y - yb))))


def check_diffusion_curvature(problem, K4, domain=(-10.0, 10.0), sample_count=2_000, seed=0, h=1e-4) -> float:
    """Bound on ``||D_xx g_j||`` via central differences of the analytic Jacobian."""
    n = problem.state_dim
    x, y = _random_points(domain, n, sample_count, np.random.default_rng(seed))
    sq = np.zeros((sample_count, problem.noise_dim))
    for l in range(n):
        e = np.zeros(n)
        e[l] = h
        djac = (problem.diffusion_jac(x + e, y) - problem.diffusion_jac(x - e, y)) / (2 * h)
        djac = _finite(djac, x, y, "diffusion Jacobian")
        sq += np.sum(djac * djac, axis=(-3, -2))
    return float(np.max(np.sqrt(sq) - K4))
