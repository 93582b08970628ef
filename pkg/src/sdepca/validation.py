"""Assumption and noise check suites shared by the CLI and the tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import problem as pm
from .noise import TickGrid, bundle, gamma_p, increment_moments, levy_area_samples, sample_master

__all__ = ["Check", "assumption_checks", "noise_checks", "bundle_identity_residuals"]

# Sampled Lipschitz-type bounds are tight for the linear diffusions, so the
# residual sits at rounding level; anything below this counts as zero.
ROUNDING_TOL = 1e-12


@dataclass(frozen=True)
class Check:
    """One named check; ``value <= threshold`` passes. Informational checks never fail."""

    name: str
    value: float
    threshold: float
    informational: bool = False

    @property
    def passed(self) -> bool:
        return self.informational or self.value <= self.threshold

    def line(self) -> str:
        tag = "INFO" if self.informational else ("PASS" if self.passed else "FAIL")
        return f"{tag} {self.name}: value={self.value:.6g} threshold={self.threshold:.6g}"


def assumption_checks(example_id: int, seed: int = 0) -> list:
    """Run every validator the certificate of a built-in example supports."""
    problem, cert = pm.make_example(example_id)
    a, b, q = cert.lower_bound
    out = [
        Check("step condition", pm.check_step_condition(problem, cert.step_fn, cert.alpha), 0.0),
        Check("step lower bound (relative shortfall)",
              pm.check_step_lower_bound(cert.step_fn, a, b, q, problem.state_dim), 4 * np.finfo(float).eps),
    ]
    if cert.growth_const is not None:
        out.append(Check("drift growth", pm.check_drift_growth(problem, cert.growth_const), ROUNDING_TOL))
    if cert.diffusion_bounds is not None:
        out.append(Check("diffusion growth", pm.check_diffusion_growth(problem, *cert.diffusion_bounds), ROUNDING_TOL))
    if cert.monotone_const is not None:
        out.append(Check("one-sided Lipschitz drift", pm.check_monotone_drift(problem, cert.monotone_const, seed=seed), ROUNDING_TOL))
    if cert.diffusion_lip is not None:
        out.append(Check("diffusion Lipschitz", pm.check_diffusion_lipschitz(problem, cert.diffusion_lip, seed=seed), ROUNDING_TOL))
    if cert.poly_growth is not None:
        out.append(Check("polynomial Lipschitz drift", pm.check_drift_poly_lipschitz(problem, *cert.poly_growth, seed=seed), ROUNDING_TOL))
    if cert.curvature_const is not None:
        out.append(Check("diffusion curvature", pm.check_diffusion_curvature(problem, cert.curvature_const, seed=seed), ROUNDING_TOL))
    if problem.noise_dim > 1:
        # Non-commutative noise is a property of the problem, not a violation.
        out.append(Check("commutativity", pm.check_commutativity(problem, seed=seed), 0.0,
                         informational=example_id == 3))
    return out


def bundle_identity_residuals(bundle_count: int, seed: int, level: int = 10, noise_dim: int = 3):
    """Worst relative residuals of ``I_rj + I_jr = dB^j dB^r`` and ``A_jr + A_rj = 0``.

    Intervals are drawn uniformly on a master path over ``[0, 2]``.
    """
    grid = TickGrid(level, 2.0)
    noise = sample_master(grid, noise_dim, seed, 0)
    rng = np.random.Generator(np.random.Philox(seed + 1))
    ends = np.sort(rng.integers(0, grid.horizon_ticks + 1, size=(bundle_count, 2)), axis=1)
    ends[:, 1] = np.maximum(ends[:, 1], ends[:, 0] + 1)
    ends = ends[ends[:, 1] <= grid.horizon_ticks]
    sym = anti = 0.0
    for s, t in ends:
        b = bundle(noise, int(s), int(t))
        for j in range(noise_dim):
            for r in range(j + 1, noise_dim):
                prod = b.dB[j] * b.dB[r]
                scale = abs(prod) + abs(b.I[j, r]) + abs(b.I[r, j]) + 1e-300
                sym = max(sym, abs(b.I[j, r] + b.I[r, j] - prod) / scale)
                anti = max(anti, abs(b.A[j, r] + b.A[r, j]) / (abs(b.A[j, r]) + abs(b.A[r, j]) + 1e-300))
    return sym, anti, len(ends)


def noise_checks(seed: int = 0, sample_count: int = 100_000, bundle_count: int = 10_000) -> list:
    """Normalised increment moments, Levy area variance and bundle identities."""
    out = []
    for p, tol in ((2, 0.03), (4, 0.03)):
        est = increment_moments(2.0**-5, p, sample_count, seed)
        out.append(Check(f"E|dB|^{p}/h^{p / 2:g} vs {gamma_p(p):g} (relative)", abs(est / gamma_p(p) - 1.0), tol))
    for e in (3, 5):
        h = 2.0**-e
        A = levy_area_samples(h, e + 8, sample_count, seed + e)
        var = float(np.mean(A * A))
        out.append(Check(f"Var(A_12) over [0, 2^-{e}] vs h^2/4 (relative)", abs(var / (h * h / 4) - 1.0), 0.05))
    sym, anti, n = bundle_identity_residuals(bundle_count, seed)
    out.append(Check(f"I_rj + I_jr = dB^j dB^r on {n} bundles", sym, 1e-12))
    out.append(Check(f"A_jr = -A_rj on {n} bundles", anti, 1e-12))
    return out

