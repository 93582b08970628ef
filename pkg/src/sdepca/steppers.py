"""Step-size control and one-step maps for all solvers.

One-step maps accept a single state of shape ``(n,)`` or a batch ``(P, n)``
together with a matching :class:`~sdepca.noise.IncrementBundle`. ``y`` is the
delayed value ``X`` at the most recent integer time.

Solvers, selected by name:

* ``adaptive_milstein``: adaptive explicit Milstein, the main scheme
* ``adaptive_euler``: adaptive explicit Euler-Maruyama
* ``tamed_milstein``: uniform Milstein with tamed drift
* ``uniform_milstein``: uniform explicit Milstein
* ``backward_euler``: uniform drift-implicit Euler
* ``backward_milstein``: uniform drift-implicit Milstein
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from .errors import ConfigurationError, DivergenceError, NewtonError, PolicyError
from .noise import IncrementBundle, MasterNoise, TickGrid, bundle
from .problem import SdepcaProblem, milstein_products

__all__ = [
    "SOLVERS",
    "ADAPTIVE_SOLVERS",
    "UNIFORM_SOLVERS",
    "IMPLICIT_SOLVERS",
    "DEFAULT_BLOWUP",
    "StepPolicy",
    "PathState",
    "PathRecord",
    "next_step",
    "milstein_step",
    "euler_step",
    "tamed_drift",
    "backward_step",
    "advance",
    "iter_path",
    "run_path",
]

ADAPTIVE_SOLVERS = ("adaptive_milstein", "adaptive_euler")
UNIFORM_SOLVERS = ("tamed_milstein", "uniform_milstein", "backward_euler", "backward_milstein")
IMPLICIT_SOLVERS = ("backward_euler", "backward_milstein")
SOLVERS = ADAPTIVE_SOLVERS + UNIFORM_SOLVERS

DEFAULT_BLOWUP = 1e10
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 100


@dataclass(frozen=True)
class StepPolicy:
    """Adaptive step rule ``min(step_fn(X)/M, [t]+1-t)`` on a tick grid.

    Uniform solvers ignore ``step_fn`` and ``M`` and use ``uniform_step``.
    ``lower_bound = (a, b, q)`` enables accumulation of
    ``sum (a|X_k|^q + b) * step_k`` for step-count checks.
    """

    grid: TickGrid
    M: int = 1
    step_fn: Optional[Callable] = None
    uniform_step: Optional[float] = None
    lower_bound: Optional[tuple] = None

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ConfigurationError(f"M must be an integer >= 1, got {self.M}", key="M")
        if self.uniform_step is not None:
            if not 0 < self.uniform_step <= 1:
                raise ConfigurationError("uniform_step must lie in (0, 1]", key="step")
            self.grid.to_ticks(self.uniform_step)

    @property
    def uniform_ticks(self) -> int:
        if self.uniform_step is None:
            raise ConfigurationError("policy has no uniform step")
        return self.grid.to_ticks(self.uniform_step)

    def check_solver(self, solver: str) -> None:
        if solver not in SOLVERS:
            raise ConfigurationError(f"unknown solver {solver!r}", key="solver")
        if solver in ADAPTIVE_SOLVERS and self.step_fn is None:
            raise ConfigurationError(f"{solver} needs a step function")
        if solver in UNIFORM_SOLVERS and self.uniform_step is None:
            raise ConfigurationError(f"{solver} needs a uniform step")


@dataclass
class PathState:
    k: int
    t_tick: int
    x: np.ndarray
    anchor: np.ndarray
    anchor_time: int
    last_ticks: int = 0


@dataclass
class PathRecord:
    """Outcome of one path. ``steps`` is ``N_T + 1``, the total number of steps."""

    terminal: np.ndarray
    integer_states: np.ndarray
    steps: int
    cost: float
    min_ticks: int
    max_ticks: int
    times: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None

    @property
    def n_T(self) -> int:
        return self.steps - 1


def _step_ticks(values, M, t_tick, tpu, K):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values) & (values > 0)):
        raise PolicyError(f"step function returned {values!r}; expected finite positive values")
    limit = np.minimum((t_tick // tpu + 1) * tpu - t_tick, K - t_tick)
    raw = np.floor(values / M * tpu)
    return np.maximum(1, np.minimum(raw, limit)).astype(np.int64)


def next_step(policy: StepPolicy, x, t_tick: int) -> int:
    """Adaptive step in ticks from state ``x`` at tick ``t_tick``.

    ``floor(min(step_fn(x)/M, next integer - t, T - t) / tick)``, at least one tick.
    """
    grid = policy.grid
    if not 0 <= t_tick < grid.horizon_ticks:
        raise ConfigurationError(f"t_tick {t_tick} outside [0, {grid.horizon_ticks})")
    value = policy.step_fn(np.asarray(x, dtype=float))
    return int(_step_ticks(value, policy.M, np.int64(t_tick), grid.ticks_per_unit, grid.horizon_ticks))


def _col(h):
    return np.asarray(h, dtype=float)[..., None]


def _diffusion_term(problem, x, y, b: IncrementBundle):
    return np.einsum("...ij,...j->...i", problem.diffusion(x, y), b.dB)


def _milstein_term(problem, x, y, b: IncrementBundle):
    return np.einsum("...ijr,...rj->...i", milstein_products(problem, x, y), b.I)


def euler_step(problem: SdepcaProblem, x, y, b: IncrementBundle, h):
    """``X + f h + sum_j g_j dB^j`` with coefficients at ``(x, y)``."""
    return x + problem.drift(x, y) * _col(h) + _diffusion_term(problem, x, y, b)


def milstein_step(problem: SdepcaProblem, x, y, b: IncrementBundle, h):
    """Euler step plus ``sum_{j,r} D_x g_j g_r I_rj``."""
    return euler_step(problem, x, y, b, h) + _milstein_term(problem, x, y, b)


def tamed_drift(f_value, x, y, step):
    """``f / (1 + step (|x|^2 + |y|^2))``."""
    if not np.all(np.asarray(step) > 0):
        raise ConfigurationError("taming step must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    denom = 1.0 + np.asarray(step) * (np.sum(x * x, axis=-1) + np.sum(y * y, axis=-1))
    return np.asarray(f_value) / denom[..., None]


def _tamed_milstein_step(problem, x, y, b, h, tame_step):
    f = tamed_drift(problem.drift(x, y), x, y, tame_step)
    return x + f * _col(h) + _diffusion_term(problem, x, y, b) + _milstein_term(problem, x, y, b)


def _newton(problem, y, rhs, h, z, tol, max_iter):
    """Solve ``z - h f(z, y) = rhs`` for every row; returns ``(z, converged, residual)``."""
    n = problem.state_dim
    hc = _col(h)
    eye = np.eye(n)
    z = np.array(z, dtype=float)
    todo = np.ones(z.shape[:-1], dtype=bool)
    res = np.full(z.shape[:-1], np.inf)
    for _ in range(max_iter + 1):
        F = z - problem.drift(z, y) * hc - rhs
        res = np.where(todo, np.sqrt(np.sum(F * F, axis=-1)), res)
        todo = todo & ~(res <= tol)
        if not todo.any():
            break
        J = eye - problem.drift_jac(z, y) * hc[..., None]
        if n == 1:
            dz = F / J[..., 0]
        else:
            dz = np.linalg.solve(J, F[..., None])[..., 0]
        z = np.where(todo[..., None], z - dz, z)
    return z, ~todo, res


def backward_step(problem: SdepcaProblem, x, y, b: IncrementBundle, h, scheme="backward_milstein",
                  newton_tol=NEWTON_TOL, newton_max_iter=NEWTON_MAX_ITER):
    """Drift-implicit step ``X' = X + f(X', y) h + diffusion [+ Milstein correction]``.

    Noise terms are explicit. Newton starts from the explicit Euler predictor.
    """
    z, ok, res = _implicit(problem, scheme, x, y, b, h, newton_tol, newton_max_iter)
    if not np.all(ok):
        raise NewtonError(f"Newton did not converge in {newton_max_iter} iterations "
                          f"(residual {np.max(res):.3e})", residual=float(np.max(res)))
    return z


def _implicit(problem, scheme, x, y, b, h, tol, max_iter):
    if problem.drift_jac is None:
        raise ConfigurationError(f"{scheme} needs problem.drift_jac")
    if scheme not in IMPLICIT_SOLVERS:
        raise ConfigurationError(f"unknown implicit scheme {scheme!r}")
    rhs = x + _diffusion_term(problem, x, y, b)
    if scheme == "backward_milstein":
        rhs = rhs + _milstein_term(problem, x, y, b)
    z0 = rhs + problem.drift(x, y) * _col(h)
    return _newton(problem, y, rhs, h, z0, tol, max_iter)


def advance(problem, solver, x, y, b, h, tame_step=None,
            newton_tol=NEWTON_TOL, newton_max_iter=NEWTON_MAX_ITER):
    """Dispatch one step of ``solver``; returns ``(x_next, newton_ok)``."""
    if solver in ("adaptive_milstein", "uniform_milstein"):
        return milstein_step(problem, x, y, b, h), True
    if solver == "adaptive_euler":
        return euler_step(problem, x, y, b, h), True
    if solver == "tamed_milstein":
        return _tamed_milstein_step(problem, x, y, b, h, tame_step), True
    if solver in IMPLICIT_SOLVERS:
        z, ok, _ = _implicit(problem, solver, x, y, b, h, newton_tol, newton_max_iter)
        return z, ok
    raise ConfigurationError(f"unknown solver {solver!r}", key="solver")


def iter_path(problem: SdepcaProblem, policy: StepPolicy, solver: str, noise: MasterNoise, *,
              newton_tol=NEWTON_TOL, newton_max_iter=NEWTON_MAX_ITER,
              blowup=DEFAULT_BLOWUP) -> Iterator[PathState]:
    """Step a single path, yielding the state at ``t_0 = 0`` and after every step.

    This is the plain scalar loop; Monte Carlo runs go through
    :mod:`sdepca.engine`, which must agree with it.
    """
    policy.check_solver(solver)
    grid = policy.grid
    if noise.grid != grid:
        raise ConfigurationError("noise grid differs from policy grid")
    if grid.horizon != problem.horizon:
        raise ConfigurationError("grid horizon differs from problem horizon")
    if noise.noise_dim != problem.noise_dim:
        raise ConfigurationError("noise dimension differs from problem")
    tpu, K = grid.ticks_per_unit, grid.horizon_ticks
    adaptive = solver in ADAPTIVE_SOLVERS
    tame = policy.uniform_step if solver == "tamed_milstein" else None
    x = problem.initial_value.copy()
    state = PathState(0, 0, x, x.copy(), 0)
    yield state
    while state.t_tick < K:
        t = state.t_tick
        if adaptive:
            dt = next_step(policy, state.x, t)
        else:
            dt = int(min(policy.uniform_ticks, (t // tpu + 1) * tpu - t, K - t))
        b = bundle(noise, t, t + dt)
        x_next, ok = advance(problem, solver, state.x, state.anchor, b, b.h, tame, newton_tol, newton_max_iter)
        if not np.all(ok):
            raise NewtonError(f"Newton failed at step {state.k}", step=state.k, path=noise.path_index)
        if not (np.all(np.isfinite(x_next)) and np.max(np.abs(x_next)) <= blowup):
            raise DivergenceError(
                f"{solver} diverged at step {state.k}, t={t * grid.tick}",
                step=state.k, time=t * grid.tick, path=noise.path_index,
            )
        t_next = t + dt
        anchor, anchor_time = state.anchor, state.anchor_time
        if t_next % tpu == 0:
            anchor, anchor_time = x_next.copy(), t_next // tpu
        state = PathState(state.k + 1, t_next, x_next, anchor, anchor_time, dt)
        yield state


def _record_from_states(states, policy, problem):
    grid = policy.grid
    tpu = grid.ticks_per_unit
    times = np.array([s.t_tick for s in states], dtype=np.int64)
    xs = np.array([s.x for s in states])
    ticks = np.diff(times)
    ints = np.array([xs[i] for i, s in enumerate(states) if s.t_tick % tpu == 0])
    cost = math.nan
    if policy.lower_bound is not None:
        a, b, q = policy.lower_bound
        norms = np.sqrt(np.sum(xs[:-1] * xs[:-1], axis=-1))
        cost = float(np.sum((a * norms**q + b) * (ticks * grid.tick)))
    return PathRecord(
        terminal=xs[-1].copy(),
        integer_states=ints,
        steps=len(states) - 1,
        cost=cost,
        min_ticks=int(ticks.min()),
        max_ticks=int(ticks.max()),
        times=times * grid.tick,
        states=xs,
    )


def run_path(problem: SdepcaProblem, policy: StepPolicy, solver: str, noise: MasterNoise,
             record_trajectory: bool = False, backend: str = "auto", **options) -> PathRecord:
    """Integrate one path from ``t = 0`` to ``T``.

    With ``record_trajectory`` the scalar loop is used and all grid times and
    states are kept; otherwise the batch engine runs a batch of one.
    Divergence raises :class:`DivergenceError`.
    """
    if record_trajectory or backend == "reference":
        states = list(iter_path(problem, policy, solver, noise, **options))
        return _record_from_states(states, policy, problem)
    from .engine import integrate

    res = integrate(problem, policy, solver, [noise], backend=backend, **options)
    res.raise_on_failure(solver)
    return res.record(0)
