"""Batch integration of many paths on their master noise.

Two interchangeable backends:

``compiled``
    :mod:`sdepca._core` (Cython). Covers the built-in example coefficients,
    the built-in :class:`~sdepca.problem.RationalStep` step function and
    scalar states. Releases the GIL.
``python``
    numpy-vectorised over paths, any :class:`~sdepca.problem.SdepcaProblem`.

``backend="auto"`` picks the compiled core when it is importable and covers
the problem; setting ``SDEPCA_BACKEND=python`` forces the fallback.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DivergenceError, NewtonError, PolicyError
from .noise import MasterNoise, bundle_from_prefix
from .steppers import (
    ADAPTIVE_SOLVERS,
    DEFAULT_BLOWUP,
    NEWTON_MAX_ITER,
    NEWTON_TOL,
    SOLVERS,
    PathRecord,
    StepPolicy,
    _step_ticks,
    advance,
)

try:
    from . import _core
except ImportError:  # pragma: no cover - depends on the build
    _core = None

__all__ = ["HAVE_COMPILED", "BatchResult", "integrate", "compiled_supports", "default_backend"]

HAVE_COMPILED = _core is not None

OK, DIVERGED, NEWTON_FAILED = 0, 1, 2
_POLICY_FAILED = 3
_SOLVER_CODES = {name: i for i, name in enumerate(SOLVERS)}


def default_backend() -> str:
    forced = os.environ.get("SDEPCA_BACKEND", "").strip().lower()
    if forced in ("python", "compiled"):
        return forced
    return "compiled" if HAVE_COMPILED else "python"


@dataclass
class BatchResult:
    """Per-path outcomes; ``steps[i]`` is ``N_T + 1`` for path ``i``.

    ``status`` is 0 (ok), 1 (diverged) or 2 (Newton failure); ``fail_step``
    is the step index at which a failed path stopped, -1 otherwise.
    """

    terminal: np.ndarray
    integer_states: np.ndarray
    steps: np.ndarray
    cost: np.ndarray
    min_ticks: np.ndarray
    max_ticks: np.ndarray
    status: np.ndarray
    fail_step: np.ndarray
    path_indices: np.ndarray
    backend: str

    @property
    def failed(self) -> np.ndarray:
        return self.status != OK

    def record(self, i: int) -> PathRecord:
        return PathRecord(
            terminal=self.terminal[i].copy(),
            integer_states=self.integer_states[i].copy(),
            steps=int(self.steps[i]),
            cost=float(self.cost[i]),
            min_ticks=int(self.min_ticks[i]),
            max_ticks=int(self.max_ticks[i]),
        )

    def raise_on_failure(self, solver: str) -> None:
        bad = np.flatnonzero(self.failed)
        if bad.size == 0:
            return
        i = int(bad[0])
        path = int(self.path_indices[i])
        step = int(self.fail_step[i])
        if self.status[i] == NEWTON_FAILED:
            raise NewtonError(f"{solver}: Newton failed on path {path} at step {step}", step=step, path=path)
        raise DivergenceError(f"{solver}: path {path} diverged at step {step}", step=step, path=path)


def compiled_supports(problem, policy: StepPolicy, solver: str) -> bool:
    if not HAVE_COMPILED or problem.kernel_code not in (1, 2, 3) or problem.state_dim != 1:
        return False
    if solver in ADAPTIVE_SOLVERS:
        return getattr(policy.step_fn, "kernel_code", 0) == 1
    return True


def _stack(noises: Sequence[MasterNoise]):
    path = np.stack([nz.path for nz in noises])
    area = np.stack([nz.area_prefix for nz in noises])
    idx = np.array([nz.path_index for nz in noises], dtype=np.int64)
    return path, area, idx


def integrate(problem, policy: StepPolicy, solver: str, noises: Sequence[MasterNoise], *,
              backend: str = "auto", newton_tol: float = NEWTON_TOL,
              newton_max_iter: int = NEWTON_MAX_ITER, blowup: float = DEFAULT_BLOWUP) -> BatchResult:
    """Run ``solver`` on every path in ``noises``. Failed paths are flagged, not raised."""
    policy.check_solver(solver)
    grid = policy.grid
    if grid.horizon != problem.horizon:
        raise ConfigurationError("grid horizon differs from problem horizon")
    if not noises:
        raise ConfigurationError("no noise paths given")
    for nz in noises:
        if nz.grid != grid or nz.noise_dim != problem.noise_dim:
            raise ConfigurationError("noise path does not match grid or noise dimension")
    if solver in ("backward_euler", "backward_milstein") and problem.drift_jac is None:
        raise ConfigurationError(f"{solver} needs problem.drift_jac")
    path, area, idx = _stack(noises)
    if backend == "auto":
        backend = default_backend()
    if backend == "compiled":
        if not compiled_supports(problem, policy, solver):
            backend = "python"
    elif backend != "python":
        raise ConfigurationError(f"unknown backend {backend!r}")
    args = (problem, policy, solver, path, area, newton_tol, newton_max_iter, blowup)
    out = _run_compiled(*args) if backend == "compiled" else _run_python(*args)
    if np.any(out[6] == _POLICY_FAILED):
        raise PolicyError("step function returned a non-finite or non-positive value")
    return BatchResult(*out, path_indices=idx, backend=backend)


def _allocate(P, n, nint, K):
    terminal = np.full((P, n), np.nan)
    ints = np.full((P, nint, n), np.nan)
    steps = np.zeros(P, dtype=np.int64)
    cost = np.zeros(P)
    min_t = np.full(P, K + 1, dtype=np.int64)
    max_t = np.zeros(P, dtype=np.int64)
    status = np.zeros(P, dtype=np.int8)
    fail = np.full(P, -1, dtype=np.int64)
    return terminal, ints, steps, cost, min_t, max_t, status, fail


def _run_python(problem, policy, solver, path, area, tol, max_iter, blowup):
    grid = policy.grid
    P = path.shape[0]
    n = problem.state_dim
    K, tpu, tick = grid.horizon_ticks, grid.ticks_per_unit, grid.tick
    nint = K // tpu + 1
    terminal, ints, steps, cost, min_t, max_t, status, fail = _allocate(P, n, nint, K)
    adaptive = solver in ADAPTIVE_SOLVERS
    tame = policy.uniform_step if solver == "tamed_milstein" else None
    uniform = None if adaptive else policy.uniform_ticks
    lb = policy.lower_bound

    x = np.tile(problem.initial_value, (P, 1))
    y = x.copy()
    t = np.zeros(P, dtype=np.int64)
    ints[:, 0] = x
    active = np.arange(P)
    while active.size:
        xa, ya, ta = x[active], y[active], t[active]
        if adaptive:
            dt = _step_ticks(policy.step_fn(xa), policy.M, ta, tpu, K)
        else:
            dt = np.minimum(uniform, np.minimum((ta // tpu + 1) * tpu - ta, K - ta))
        te = ta + dt
        b = bundle_from_prefix(path, area, ta, te, tick, rows=active)
        xn, ok = advance(problem, solver, xa, ya, b, b.h, tame, tol, max_iter)
        if lb is not None:
            a_, b_, q_ = lb
            cost[active] += (a_ * np.sqrt(np.sum(xa * xa, axis=-1)) ** q_ + b_) * b.h
        ok = np.broadcast_to(ok, ta.shape)
        finite = np.all(np.isfinite(xn), axis=-1) & (np.max(np.abs(xn), axis=-1) <= blowup)
        newton_bad = ~ok
        div_bad = ok & ~finite
        bad = newton_bad | div_bad
        if bad.any():
            rows = active[bad]
            status[active[newton_bad]] = NEWTON_FAILED
            status[active[div_bad]] = DIVERGED
            fail[rows] = steps[rows]
            terminal[rows] = xn[bad]
        good = ~bad
        rows = active[good]
        x[rows] = xn[good]
        t[rows] = te[good]
        steps[rows] += 1
        dtg = dt[good]
        min_t[rows] = np.minimum(min_t[rows], dtg)
        max_t[rows] = np.maximum(max_t[rows], dtg)
        at_int = te[good] % tpu == 0
        hit = rows[at_int]
        y[hit] = x[hit]
        ints[hit, t[hit] // tpu] = x[hit]
        active = rows[t[rows] < K]
    done = status == OK
    terminal[done] = x[done]
    if lb is None:
        cost[:] = math.nan
    return terminal, ints, steps, cost, min_t, max_t, status, fail


def _run_compiled(problem, policy, solver, path, area, tol, max_iter, blowup):
    grid = policy.grid
    P = path.shape[0]
    K, tpu = grid.horizon_ticks, grid.ticks_per_unit
    nint = K // tpu + 1
    terminal, ints, steps, cost, min_t, max_t, status, fail = _allocate(P, 1, nint, K)
    adaptive = solver in ADAPTIVE_SOLVERS
    lb = policy.lower_bound
    _core.integrate(
        int(problem.kernel_code),
        _SOLVER_CODES[solver],
        np.ascontiguousarray(path),
        np.ascontiguousarray(area),
        float(problem.initial_value[0]),
        int(tpu),
        int(K),
        int(policy.M),
        float(policy.step_fn.scale) if adaptive else 0.0,
        0 if adaptive else int(policy.uniform_ticks),
        float(policy.uniform_step) if solver == "tamed_milstein" else 0.0,
        lb is not None,
        *(float(v) for v in (lb if lb is not None else (0.0, 0.0, 0.0))),
        float(tol),
        int(max_iter),
        float(blowup),
        terminal[:, 0],
        ints[:, :, 0],
        steps,
        cost,
        min_t,
        max_t,
        status,
        fail,
    )
    if lb is None:
        cost[:] = math.nan
    return terminal, ints, steps, cost, min_t, max_t, status, fail
