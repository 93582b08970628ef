import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdepca.errors import ConfigurationError
from sdepca.noise import (
    TickGrid,
    bundle,
    bundle_from_prefix,
    dump_csv,
    gamma_p,
    increment_moments,
    levy_area_samples,
    sample_master,
)

GRID = TickGrid(8, 2.0)
NOISE3 = sample_master(GRID, 3, 11, 0)
K = GRID.horizon_ticks

intervals = st.tuples(st.integers(0, K - 1), st.integers(1, K)).filter(lambda st_: st_[0] < st_[1])


def double_factorial(n):
    return 1 if n <= 0 else n * double_factorial(n - 2)


# -- grid ----------------------------------------------------------------------------


def test_level13_horizon2_tick_count():
    assert TickGrid(13, 2.0).horizon_ticks == 16384


def test_integer_times_are_tick_multiples():
    grid = TickGrid(13, 2.0)
    assert [grid.to_ticks(m) for m in (0, 1, 2)] == [0, 8192, 16384]


def test_grid_errors():
    with pytest.raises(ConfigurationError):
        TickGrid(0, 2.0)
    with pytest.raises(ConfigurationError):
        TickGrid(40, 2.0**2)
    with pytest.raises(ConfigurationError):
        TickGrid(13, 2.0).to_ticks(0.1)


# -- master noise ----------------------------------------------------------------------


def test_regeneration_is_bit_identical():
    a = sample_master(GRID, 2, 5, 3)
    b = sample_master(GRID, 2, 5, 3)
    c = sample_master(GRID, 2, 5, 4)
    np.testing.assert_array_equal(a.increments, b.increments)
    np.testing.assert_array_equal(a.area_prefix, b.area_prefix)
    assert not np.array_equal(a.increments, c.increments)


def test_channels_do_not_depend_on_noise_dimension():
    one = sample_master(GRID, 1, 5, 3)
    two = sample_master(GRID, 2, 5, 3)
    np.testing.assert_array_equal(one.increments[0], two.increments[0])


def test_increment_mean_and_variance():
    grid = TickGrid(10, 128.0)
    inc = sample_master(grid, 1, 2024, 0).increments[0]
    n = inc.size
    assert n >= 100_000
    sigma = math.sqrt(grid.tick)
    assert abs(inc.mean()) < 4 * sigma / math.sqrt(n)
    assert abs(inc.var() / grid.tick - 1.0) < 0.05


def test_path_starts_at_zero_and_sums_increments():
    np.testing.assert_array_equal(NOISE3.path[:, 0], 0.0)
    np.testing.assert_array_equal(NOISE3.path[:, 1:], np.cumsum(NOISE3.increments, axis=1))


# -- bundles ---------------------------------------------------------------------------


def test_single_tick_bundle_has_no_area():
    b = bundle(NOISE3, 17, 18)
    np.testing.assert_array_equal(b.A, 0.0)
    np.testing.assert_array_equal(np.diag(b.I), 0.5 * (b.dB**2 - GRID.tick))


@pytest.mark.parametrize("s,t", [(5, 5), (6, 5), (-1, 3), (0, K + 1)])
def test_bad_interval(s, t):
    with pytest.raises(ConfigurationError):
        bundle(NOISE3, s, t)


@given(intervals)
def test_bundle_identities(iv):
    s, t = iv
    b = bundle(NOISE3, s, t)
    h = (t - s) * GRID.tick
    np.testing.assert_array_equal(b.A, -b.A.T)
    np.testing.assert_array_equal(np.diag(b.I), 0.5 * (b.dB**2 - h))
    for j in range(3):
        for r in range(3):
            if j == r:
                continue
            prod = b.dB[j] * b.dB[r]
            scale = abs(prod) + abs(b.I[j, r]) + abs(b.I[r, j])
            assert abs(b.I[r, j] + b.I[j, r] - prod) <= 1e-12 * scale
            assert b.A[j, r] == pytest.approx(0.5 * (b.I[j, r] - b.I[r, j]), rel=1e-12, abs=1e-15)


@given(intervals, st.integers(1, K - 1))
def test_increment_additivity(iv, u):
    s, t = iv
    if not s < u < t:
        return
    whole = bundle(NOISE3, s, t).dB
    parts = bundle(NOISE3, s, u).dB + bundle(NOISE3, u, t).dB
    np.testing.assert_array_equal(whole, parts)


@given(intervals)
def test_area_matches_direct_riemann_sum(iv):
    s, t = iv
    b = bundle(NOISE3, s, t)
    B = NOISE3.path
    inc = NOISE3.increments
    # oracle: left-point sum of (B^j - B^j(s)) dB^r - (B^r - B^r(s)) dB^j, in a plain loop
    j, r = 0, 2
    acc = 0.0
    for m in range(s, t):
        acc += (B[j, m] - B[j, s]) * inc[r, m] - (B[r, m] - B[r, s]) * inc[j, m]
    assert b.A[j, r] == pytest.approx(0.5 * acc, rel=1e-9, abs=1e-14)


@given(st.lists(intervals, min_size=1, max_size=8))
def test_prefix_bundles_match_direct(ivs):
    s = np.array([a for a, _ in ivs])
    t = np.array([b for _, b in ivs])
    path = np.stack([NOISE3.path] * len(ivs))
    area = np.stack([NOISE3.area_prefix] * len(ivs))
    fast = bundle_from_prefix(path, area, s, t, GRID.tick)
    for i, (a, b) in enumerate(ivs):
        ref = bundle(NOISE3, a, b)
        np.testing.assert_array_equal(fast.dB[i], ref.dB)
        np.testing.assert_allclose(fast.A[i], ref.A, rtol=1e-9, atol=1e-13)


def test_dump_csv(tmp_path):
    out = tmp_path / "noise.csv"
    dump_csv(sample_master(TickGrid(3, 1.0), 2, 0, 0), out, every=2)
    lines = out.read_text().splitlines()
    assert lines[0] == "tick,B1,B2"
    assert len(lines) == 1 + 5


# -- moments ---------------------------------------------------------------------------


def test_gamma_p_values():
    assert gamma_p(2) == pytest.approx(1.0, rel=1e-15)
    assert gamma_p(4) == pytest.approx(3.0, rel=1e-15)
    assert gamma_p(1) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-15)


@given(st.integers(1, 8))
def test_gamma_p_even_moments_are_double_factorials(k):
    assert gamma_p(2 * k) == pytest.approx(double_factorial(2 * k - 1), rel=1e-13)


@pytest.mark.parametrize("p", [2, 4])
def test_normalised_increment_moments(p):
    est = increment_moments(2.0**-7, p, 100_000, seed=3)
    assert abs(est / gamma_p(p) - 1.0) < 0.03


def test_levy_area_variance_h4_level14():
    h = 2.0**-4
    A = levy_area_samples(h, 14, 100_000, seed=8)
    assert abs(np.mean(A * A) / (h * h / 4) - 1.0) < 0.05


def test_levy_area_variance_against_independent_oracle():
    # Oracle: a separate left-point simulation with numpy's default generator;
    # the discrete area over n ticks has variance (h^2 / 4)(1 - 1/n).
    h, n, count = 2.0**-3, 64, 40_000
    rng = np.random.default_rng(99)
    dW = rng.standard_normal((count, 2, n)) * math.sqrt(h / n)
    W = np.cumsum(dW, axis=2) - dW
    oracle = 0.5 * np.sum(W[:, 0] * dW[:, 1] - W[:, 1] * dW[:, 0], axis=1)
    lib = levy_area_samples(h, 9, count, seed=1)
    exact = h * h / 4 * (1 - 1 / n)
    assert abs(np.var(oracle) / exact - 1) < 0.05
    assert abs(np.var(lib) / exact - 1) < 0.05


@pytest.mark.parametrize("p", [2, 4])
def test_levy_area_moments_scale_with_interval(p):
    ratios = []
    for e in (3, 4, 5):
        h = 2.0**-e
        A = levy_area_samples(h, e + 6, 100_000, seed=e)
        ratios.append(np.mean(np.abs(A) ** p) / h**p)
    assert max(ratios) / min(ratios) < 1.2
