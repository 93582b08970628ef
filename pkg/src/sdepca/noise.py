"""Seeded Brownian master paths on a dyadic tick grid and iterated integrals.

Every solver step endpoint is a tick, so any number of schemes can consume
the same Brownian path and be compared pathwise.

Increments are rounded to multiples of ``2**-40``. With ``|B| < 2**12`` all
prefix sums and their differences are then exact in double precision, which
makes increments additive over adjacent intervals without rounding error.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "TickGrid",
    "MasterNoise",
    "IncrementBundle",
    "sample_master",
    "bundle",
    "bundle_from_prefix",
    "gamma_p",
    "increment_moments",
    "levy_area_samples",
    "dump_csv",
]

_QUANTUM_EXP = 40
_B_LIMIT = 2.0**12
_MAX_TICKS = 2**40


@dataclass(frozen=True)
class TickGrid:
    level: int
    horizon: float

    def __post_init__(self):
        if int(self.level) != self.level or self.level < 1:
            raise ConfigurationError(f"level must be an integer >= 1, got {self.level}", key="level")
        if self.level > 40:
            raise ConfigurationError("level above 40 is not supported", key="level")
        ticks = self.horizon * 2.0**self.level
        if not (self.horizon > 0 and ticks == math.floor(ticks)):
            raise ConfigurationError(
                f"horizon {self.horizon} is not a multiple of the tick 2^-{self.level}", key="horizon"
            )
        if ticks > _MAX_TICKS:
            raise ConfigurationError("horizon_ticks overflows the supported tick range", key="level")

    @property
    def tick(self) -> float:
        return 2.0**-self.level

    @property
    def ticks_per_unit(self) -> int:
        return 1 << self.level

    @property
    def horizon_ticks(self) -> int:
        return int(self.horizon * 2.0**self.level)

    def to_ticks(self, t: float) -> int:
        """Exact tick count of ``t``; raises when ``t`` is not on the grid."""
        v = t * 2.0**self.level
        if not (np.isfinite(v) and v == math.floor(v)):
            raise ConfigurationError(f"{t!r} is not representable in ticks of 2^-{self.level}")
        return int(v)


@dataclass(eq=False)
class MasterNoise:
    """One Brownian path: ``increments[j, m]`` is the increment over tick ``m+1``.

    ``path[j, m] = B^j(m * tick)``. ``area_prefix[k, m]`` holds, for the
    ``k``-th pair ``j < r`` (row-major), the running sum of
    ``B^j dB^r - B^r dB^j`` with left-point evaluation.
    """

    grid: TickGrid
    seed: int
    path_index: int
    increments: np.ndarray
    path: np.ndarray
    area_prefix: np.ndarray

    @property
    def noise_dim(self) -> int:
        return self.increments.shape[0]


@dataclass
class IncrementBundle:
    """Brownian increments and iterated Ito integrals over ``[s, t]``.

    ``I[..., r, j]`` is the double integral of ``dB^r`` (inner) then ``dB^j``
    (outer). ``A[..., j, r] = (I[..., j, r] - I[..., r, j]) / 2`` is the Levy
    area; it is antisymmetric.
    """

    s_tick: object
    t_tick: object
    h: object
    dB: np.ndarray
    I: np.ndarray
    A: np.ndarray


def _pair_index(d):
    return [(j, r) for j in range(d) for r in range(j + 1, d)]


def _quantize(z):
    return np.ldexp(np.rint(np.ldexp(z, _QUANTUM_EXP)), -_QUANTUM_EXP)


def _channel_rng(seed, path_index, channel):
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(path_index), int(channel)))
    return np.random.Generator(np.random.Philox(ss))


def sample_master(grid: TickGrid, d: int, seed: int, path_index: int) -> MasterNoise:
    """Generate the master path for ``(seed, path_index)``.

    Channel ``j`` is drawn from its own Philox stream keyed by
    ``(seed, path_index, j)``, so results never depend on execution order or
    on how many channels a problem uses.
    """
    if d < 1:
        raise ConfigurationError("noise dimension must be >= 1")
    K = grid.horizon_ticks
    scale = math.sqrt(grid.tick)
    inc = np.empty((d, K))
    for j in range(d):
        inc[j] = _quantize(_channel_rng(seed, path_index, j).standard_normal(K) * scale)
    path = np.zeros((d, K + 1))
    np.cumsum(inc, axis=1, out=path[:, 1:])
    if np.max(np.abs(path)) >= _B_LIMIT:
        raise ConfigurationError("Brownian path left the exact-summation range")
    pairs = _pair_index(d)
    area = np.zeros((len(pairs), K + 1))
    for k, (j, r) in enumerate(pairs):
        np.cumsum(path[j, :-1] * inc[r] - path[r, :-1] * inc[j], out=area[k, 1:])
    return MasterNoise(grid, int(seed), int(path_index), inc, path, area)


def _assemble(s_tick, t_tick, h, dB, J):
    """Build a bundle from increments and the antisymmetric part ``J_jr - J_rj``."""
    d = dB.shape[-1]
    h_arr = np.asarray(h, dtype=float)
    outer = dB[..., :, None] * dB[..., None, :]
    A = np.zeros(dB.shape[:-1] + (d, d))
    for k, (j, r) in enumerate(_pair_index(d)):
        A[..., j, r] = 0.5 * J[..., k]
        A[..., r, j] = -A[..., j, r]
    I = 0.5 * outer + A
    idx = np.arange(d)
    I[..., idx, idx] = 0.5 * (dB * dB - h_arr[..., None])
    return IncrementBundle(s_tick, t_tick, h, dB, I, A)


def bundle(noise: MasterNoise, s_tick: int, t_tick: int) -> IncrementBundle:
    """Increments and iterated integrals over ``[s_tick, t_tick]`` by direct accumulation."""
    K = noise.grid.horizon_ticks
    if not (0 <= s_tick < t_tick <= K):
        raise ConfigurationError(f"invalid tick interval [{s_tick}, {t_tick}] for horizon {K}")
    B, inc = noise.path, noise.increments
    dB = B[:, t_tick] - B[:, s_tick]
    rel = B[:, s_tick:t_tick] - B[:, s_tick, None]
    step = inc[:, s_tick:t_tick]
    pairs = _pair_index(noise.noise_dim)
    J = np.array([np.dot(rel[j], step[r]) - np.dot(rel[r], step[j]) for j, r in pairs])
    h = (t_tick - s_tick) * noise.grid.tick
    return _assemble(s_tick, t_tick, h, dB, J)


def bundle_from_prefix(path, area_prefix, s_tick, t_tick, tick, rows=None) -> IncrementBundle:
    """Vectorised bundles for a batch of paths with per-path intervals.

    ``path`` has shape ``(P, d, K+1)`` and ``area_prefix`` ``(P, pairs, K+1)``.
    ``rows`` selects the paths (default: all); ``s_tick`` and ``t_tick``
    align with ``rows``.
    """
    if rows is None:
        rows = np.arange(path.shape[0])
    Bs = path[rows, :, s_tick]
    Bt = path[rows, :, t_tick]
    dB = Bt - Bs
    pairs = _pair_index(path.shape[1])
    J = np.empty((len(rows), len(pairs)))
    for k, (j, r) in enumerate(pairs):
        dD = area_prefix[rows, k, t_tick] - area_prefix[rows, k, s_tick]
        J[:, k] = dD - Bs[:, j] * dB[:, r] + Bs[:, r] * dB[:, j]
    h = (t_tick - s_tick) * tick
    return _assemble(s_tick, t_tick, h, dB, J)


def gamma_p(p: float) -> float:
    """``E|Z|^p`` for standard normal ``Z``: ``2^(p/2) Gamma((p+1)/2) / sqrt(pi)``."""
    return 2.0 ** (p / 2) * math.gamma((p + 1) / 2) / math.sqrt(math.pi)


def increment_moments(h: float, p: float, sample_count: int, seed: int = 0) -> float:
    """Sample estimate of ``E|dB|^p / h^(p/2)`` for ``dB ~ N(0, h)``."""
    if h <= 0:
        raise ConfigurationError("h must be positive")
    rng = np.random.Generator(np.random.Philox(seed))
    dB = rng.standard_normal(sample_count) * math.sqrt(h)
    return float(np.mean(np.abs(dB) ** p) / h ** (p / 2))


def levy_area_samples(h: float, level: int, sample_count: int, seed: int = 0, chunk: int = 2048) -> np.ndarray:
    """Independent samples of ``A_12`` over ``[0, h]`` by master-grid accumulation at ``level``."""
    n = TickGrid(level, h).horizon_ticks
    rng = np.random.Generator(np.random.Philox(seed))
    scale = math.sqrt(2.0**-level)
    out = np.empty(sample_count)
    for start in range(0, sample_count, chunk):
        m = min(chunk, sample_count - start)
        inc = _quantize(rng.standard_normal((m, 2, n)) * scale)
        path = np.cumsum(inc, axis=2)
        left = path[:, :, :-1]
        J = np.sum(left[:, 0] * inc[:, 1, 1:], axis=1) - np.sum(left[:, 1] * inc[:, 0, 1:], axis=1)
        out[start:start + m] = 0.5 * J
    return out


def dump_csv(noise: MasterNoise, filename, every: int = 1) -> None:
    """Write ``tick, B^1, ..., B^d`` rows (debugging aid)."""
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick"] + [f"B{j + 1}" for j in range(noise.noise_dim)])
        for m in range(0, noise.path.shape[1], every):
            w.writerow([m] + [f"{v:.17g}" for v in noise.path[:, m]])
