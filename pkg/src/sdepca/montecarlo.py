"""Coupled-path Monte Carlo error experiments.

For every path index one master noise is drawn; the reference solver and all
candidates run on it, and the terminal errors ``|x_ref(T) - X(T)|^p`` are
averaged. Paths are processed in fixed chunks and folded in path order, so
the resulting table does not depend on the number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .engine import integrate
from .errors import ConfigurationError, DivergenceError, InsufficientDataError
from .noise import TickGrid, sample_master
from .problem import SdepcaProblem
from .steppers import ADAPTIVE_SOLVERS, DEFAULT_BLOWUP, NEWTON_MAX_ITER, NEWTON_TOL, SOLVERS, StepPolicy

__all__ = [
    "DEFAULT_SEED",
    "Candidate",
    "ExperimentPlan",
    "CandidateResult",
    "OrderFit",
    "ErrorTable",
    "StepScaling",
    "run_experiment",
    "step_count_scaling",
    "fit_order",
]

DEFAULT_SEED = 20240607
CHUNK_SIZE = 64


@dataclass(frozen=True)
class Candidate:
    """A solver with its parameter: ``M`` for adaptive solvers, the step size otherwise."""

    solver: str
    param: float

    @property
    def adaptive(self) -> bool:
        return self.solver in ADAPTIVE_SOLVERS

    @property
    def resolution(self) -> float:
        """``M`` for adaptive solvers, ``1/step`` for uniform ones."""
        return float(self.param) if self.adaptive else 1.0 / self.param

    def param_str(self) -> str:
        return str(int(self.param)) if self.adaptive else f"{self.param:.17g}"


@dataclass
class ExperimentPlan:
    problem: SdepcaProblem
    reference: Candidate
    candidates: Sequence[Candidate]
    path_count: int
    step_fn: Optional[Callable] = None
    lower_bound: Optional[tuple] = None
    seed: int = DEFAULT_SEED
    level: int = 13
    p: float = 2.0
    backend: str = "auto"
    blowup: float = DEFAULT_BLOWUP
    newton_tol: float = NEWTON_TOL
    newton_max_iter: int = NEWTON_MAX_ITER
    notes: dict = field(default_factory=dict)

    @property
    def grid(self) -> TickGrid:
        return TickGrid(self.level, self.problem.horizon)

    def validate(self) -> None:
        grid = self.grid
        if self.path_count < 2:
            raise ConfigurationError("path_count must be >= 2", key="paths")
        if not self.p >= 1:
            raise ConfigurationError("error exponent p must be >= 1", key="p")
        if self.reference.adaptive or self.reference.solver not in SOLVERS:
            raise ConfigurationError("reference must be a uniform solver", key="reference")
        if self.reference.param != grid.tick:
            raise ConfigurationError(
                f"reference step {self.reference.param} must equal the master tick 2^-{self.level}",
                key="reference_step",
            )
        if not self.candidates:
            raise ConfigurationError("no candidate solvers", key="solvers")
        for c in self.candidates:
            self.policy(c)

    def policy(self, c: Candidate) -> StepPolicy:
        if c.solver not in SOLVERS:
            raise ConfigurationError(f"unknown solver {c.solver!r}", key="solvers")
        if c.adaptive:
            if self.step_fn is None:
                raise ConfigurationError("adaptive candidates need a step function")
            pol = StepPolicy(self.grid, M=int(c.param), step_fn=self.step_fn, lower_bound=self.lower_bound)
            if pol.M != c.param:
                raise ConfigurationError(f"M must be an integer, got {c.param}", key="M")
            return pol
        return StepPolicy(self.grid, uniform_step=float(c.param))


@dataclass
class CandidateResult:
    solver: str
    param: float
    mean_steps: float
    error_p: float
    stderr: float
    divergences: int
    integer_errors: np.ndarray
    terminal: np.ndarray
    steps: np.ndarray
    cost: np.ndarray
    integer_states: np.ndarray
    failed: np.ndarray

    @property
    def candidate(self) -> Candidate:
        return Candidate(self.solver, self.param)


@dataclass(frozen=True)
class OrderFit:
    """Least squares fit of ``log2(error)`` against ``log2(x)``; ``order = -slope``."""

    slope: float
    intercept: float
    residual: float
    n_points: int
    excluded: tuple = ()

    @property
    def order(self) -> float:
        return -self.slope


@dataclass
class ErrorTable:
    rows: list
    p: float
    path_count: int
    reference: Candidate
    reference_terminal: np.ndarray
    fits: dict
    resolution_fits: dict
    notes: dict = field(default_factory=dict)

    def row(self, solver: str, param: float) -> CandidateResult:
        for r in self.rows:
            if r.solver == solver and r.param == param:
                return r
        raise KeyError((solver, param))

    def for_solver(self, solver: str) -> list:
        return [r for r in self.rows if r.solver == solver]

    def order(self, solver: str) -> float:
        return self.fits[solver].order


def fit_order(points) -> OrderFit:
    """Fit ``log2(error) = slope * log2(x) + intercept`` by ordinary least squares.

    Points with a nonpositive or non-finite error are excluded and listed in
    ``excluded``. At least two usable points are required.
    """
    pts = [(float(x), float(e)) for x, e in points]
    if any(not (x > 0 and math.isfinite(x)) for x, _ in pts):
        raise InsufficientDataError("abscissae must be finite and positive")
    keep = [(x, e) for x, e in pts if e > 0 and math.isfinite(e)]
    excluded = tuple((x, e) for x, e in pts if not (e > 0 and math.isfinite(e)))
    if len(keep) < 2:
        raise InsufficientDataError(f"need at least 2 usable points, got {len(keep)}")
    lx = np.log2([x for x, _ in keep])
    le = np.log2([e for _, e in keep])
    if np.ptp(lx) == 0:
        raise InsufficientDataError("all abscissae coincide")
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(A, le, rcond=None)
    resid = le - (slope * lx + intercept)
    return OrderFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))), len(keep), excluded)


def _chunks(n, size=CHUNK_SIZE):
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def _map_chunks(fn, n, workers):
    chunks = _chunks(n)
    if workers <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))


def _run_options(plan):
    return dict(backend=plan.backend, newton_tol=plan.newton_tol,
                newton_max_iter=plan.newton_max_iter, blowup=plan.blowup)


def run_experiment(plan: ExperimentPlan, workers: int = 1) -> ErrorTable:
    """Run the reference and every candidate on shared noise and aggregate errors.

    A failing reference path aborts the run; failing candidate paths are
    counted as divergences and left out of the error mean.
    """
    plan.validate()
    if workers < 1:
        raise ConfigurationError("workers must be >= 1", key="workers")
    grid = plan.grid
    problem = plan.problem
    ref_policy = plan.policy(plan.reference)
    policies = [plan.policy(c) for c in plan.candidates]
    opts = _run_options(plan)

    def work(chunk):
        noises = [sample_master(grid, problem.noise_dim, plan.seed, i) for i in chunk]
        ref = integrate(problem, ref_policy, plan.reference.solver, noises, **opts)
        try:
            ref.raise_on_failure(f"reference {plan.reference.solver}")
        except DivergenceError as exc:
            raise DivergenceError(f"reference path failed: {exc}", step=exc.step, path=exc.path) from exc
        return ref, [integrate(problem, pol, c.solver, noises, **opts)
                     for c, pol in zip(plan.candidates, policies)]

    parts = _map_chunks(work, plan.path_count, workers)
    ref_terminal = np.concatenate([r.terminal for r, _ in parts])
    ref_ints = np.concatenate([r.integer_states for r, _ in parts])
    p = plan.p
    rows = []
    for k, c in enumerate(plan.candidates):
        res = [cands[k] for _, cands in parts]
        terminal = np.concatenate([r.terminal for r in res])
        ints = np.concatenate([r.integer_states for r in res])
        steps = np.concatenate([r.steps for r in res])
        cost = np.concatenate([r.cost for r in res])
        failed = np.concatenate([r.failed for r in res])
        ok = ~failed
        n_ok = int(ok.sum())
        if n_ok:
            dev = np.sqrt(np.sum((terminal[ok] - ref_terminal[ok]) ** 2, axis=-1)) ** p
            m = float(np.mean(dev))
            err = m ** (1.0 / p)
            se_m = float(np.std(dev, ddof=1) / math.sqrt(n_ok)) if n_ok > 1 else math.nan
            stderr = (m ** (1.0 / p - 1.0) * se_m / p) if m > 0 else 0.0
            int_dev = np.sqrt(np.sum((ints[ok] - ref_ints[ok]) ** 2, axis=-1)) ** p
            int_err = np.mean(int_dev, axis=0) ** (1.0 / p)
            mean_steps = float(np.mean(steps[ok]))
        else:
            err = stderr = mean_steps = math.nan
            int_err = np.full(ref_ints.shape[1], math.nan)
        rows.append(CandidateResult(c.solver, c.param, mean_steps, err, stderr, int(failed.sum()),
                                    int_err, terminal, steps, cost, ints, failed))

    fits, res_fits = {}, {}
    for solver in dict.fromkeys(c.solver for c in plan.candidates):
        usable = [r for r in rows if r.solver == solver and r.divergences == 0]
        try:
            fits[solver] = fit_order([(r.mean_steps, r.error_p) for r in usable])
            res_fits[solver] = fit_order([(r.candidate.resolution, r.error_p) for r in usable])
        except InsufficientDataError:
            pass
    return ErrorTable(rows, p, plan.path_count, plan.reference, ref_terminal, fits, res_fits, dict(plan.notes))


@dataclass
class StepScaling:
    """Step counts per ``M``; ``steps[k]`` and ``costs[k]`` hold one entry per path."""

    M_values: list
    mean_steps: list
    ratios: list
    steps: list
    costs: list
    horizon: float

    @property
    def spread(self) -> float:
        """``max(ratio) / min(ratio)``."""
        return max(self.ratios) / min(self.ratios)

    def slack(self, k: int) -> np.ndarray:
        """Pathwise ``T + 2 + M * cost - (N_T + 1)`` for the ``k``-th ``M``; nonnegative when the budget holds.

        ``cost`` is the sum of ``(a|X_k|^q + b) * step`` along the path, so the
        budget reads ``N_T + 1 <= T + 1 + M * cost + 1``.
        """
        return self.horizon + 2.0 + self.M_values[k] * self.costs[k] - self.steps[k]


def step_count_scaling(plan: ExperimentPlan, M_values=None, solver: str = "adaptive_milstein",
                       workers: int = 1) -> StepScaling:
    """Mean ``N_T + 1`` divided by ``M`` for each ``M``; bounded ratios indicate ``E(N_T+1) <= C M``.

    Per-path costs are only available when ``plan.lower_bound`` is set.
    """
    if solver not in ADAPTIVE_SOLVERS:
        raise ConfigurationError("step-count scaling needs an adaptive solver")
    if M_values is None:
        M_values = [int(c.param) for c in plan.candidates if c.solver == solver]
    if len(M_values) < 2:
        raise ConfigurationError("need at least two values of M")
    grid = plan.grid
    opts = _run_options(plan)
    policies = [plan.policy(Candidate(solver, M)) for M in M_values]

    def work(chunk):
        noises = [sample_master(grid, plan.problem.noise_dim, plan.seed, i) for i in chunk]
        out = []
        for pol in policies:
            res = integrate(plan.problem, pol, solver, noises, **opts)
            res.raise_on_failure(solver)
            out.append((res.steps, res.cost))
        return out

    parts = _map_chunks(work, plan.path_count, workers)
    steps = [np.concatenate([part[k][0] for part in parts]) for k in range(len(M_values))]
    costs = [np.concatenate([part[k][1] for part in parts]) for k in range(len(M_values))]
    means = [float(np.mean(s)) for s in steps]
    return StepScaling(list(M_values), means, [m / M for m, M in zip(means, M_values)],
                       steps, costs, float(plan.problem.horizon))
