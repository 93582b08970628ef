import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdepca import make_example
from sdepca.errors import ConfigurationError, EvaluationError
from sdepca.problem import (
    AssumptionCertificate,
    RationalStep,
    SdepcaProblem,
    check_commutativity,
    check_diffusion_curvature,
    check_diffusion_lipschitz,
    check_drift_growth,
    check_drift_poly_lipschitz,
    check_monotone_drift,
    check_step_condition,
    check_step_lower_bound,
    is_commutative,
    milstein_products,
)

ROUND = 1e-12


def scalar_problem(drift, diffusion=None, jac=None, noise_dim=1, drift_jac=None):
    diffusion = diffusion or (lambda x, y: np.zeros(np.shape(x) + (noise_dim,)))
    jac = jac or (lambda x, y: np.zeros(np.shape(x)[:-1] + (1, 1, noise_dim)))
    return SdepcaProblem(1, noise_dim, drift, diffusion, jac, [1.0], 2.0, drift_jac=drift_jac)


def ex1_step_residual(x, y, alpha):
    """Hand-coded oracle for <x,f> + step(x)|f|^2/2 - alpha (1 + x^2 + y^2) in example 1."""
    f = -x**3 + y
    return x * f + 0.5 * (2.0 / (1.0 + x * x)) * f * f - alpha * (1.0 + x * x + y * y)


# -- step condition --------------------------------------------------------------


def test_step_condition_example1_certified(ex1):
    problem, cert = ex1
    assert check_step_condition(problem, cert.step_fn, 2.5, (-50.0, 50.0), 501) <= 0.0


def test_step_condition_zero_drift_max_is_minus_alpha_at_origin():
    problem = scalar_problem(lambda x, y: np.zeros_like(x))
    assert check_step_condition(problem, RationalStep(), 1.0, (-50.0, 50.0), 501) == -1.0


def test_step_condition_small_alpha_fails(ex1):
    problem, cert = ex1
    # at (x, y) = (0, 1): 0 + 0.5 * 2 * 1 - 0.01 * 2 = 0.98
    assert ex1_step_residual(0.0, 1.0, 0.01) == pytest.approx(0.98)
    assert check_step_condition(problem, cert.step_fn, 0.01) >= 0.98


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_step_condition_matches_hand_oracle_pointwise(x, y):
    problem, cert = make_example(1)
    lib = check_step_condition(problem, cert.step_fn, 2.5, ((x, y), (x, y)), 2)
    oracle = ex1_step_residual(x, y, 2.5)
    assert lib == pytest.approx(oracle, rel=1e-12, abs=1e-9)
    assert oracle <= 0.0


def test_step_condition_rejects_nonpositive_alpha(ex1):
    with pytest.raises(ConfigurationError):
        check_step_condition(ex1[0], ex1[1].step_fn, 0.0)


# -- step function -----------------------------------------------------------------


@given(st.floats(-1e3, 1e3))
def test_rational_step_equals_lower_bound(x):
    step = RationalStep()(np.array([x]))
    assert step == pytest.approx(1.0 / (0.5 * x * x + 0.5), rel=4e-16)
    assert 0.0 < step <= 2.0


def test_step_lower_bound_holds_with_equality(ex1):
    a, b, q = ex1[1].lower_bound
    assert check_step_lower_bound(ex1[1].step_fn, a, b, q) <= 4 * np.finfo(float).eps


def test_step_lower_bound_detects_too_small_step():
    assert check_step_lower_bound(RationalStep(1.0), 0.5, 0.5, 2.0) == pytest.approx(1.0)


# -- commutativity -------------------------------------------------------------------


def test_commutativity_example2_exactly_zero(ex2):
    assert check_commutativity(ex2[0], sample_count=10_000) == 0.0
    assert is_commutative(ex2[0])


def test_commutativity_example3_hand_value(ex3):
    # D_x g_1 g_2 = -x + y = 0, D_x g_2 g_1 = -(x + y) = -2 at (1, 1)
    value = check_commutativity(ex3[0], points=([[1.0]], [[1.0]]))
    assert value == 2.0
    assert check_commutativity(ex3[0]) > 0
    assert not is_commutative(ex3[0])


def test_commutativity_single_channel(ex1):
    assert check_commutativity(ex1[0]) == 0.0


def test_milstein_products_example3(ex3):
    L = milstein_products(ex3[0], np.array([[1.0]]), np.array([[1.0]]))
    # L[i, j, r] = D_x g_j * g_r with g = (x + y, -x + y), D_x g = (1, -1)
    np.testing.assert_array_equal(L[0, 0], [[2.0, 0.0], [-2.0, -0.0]])


# -- Lipschitz-type checks -----------------------------------------------------------


def test_monotone_drift_example1(ex1):
    assert check_monotone_drift(ex1[0], 1.0) <= 0.0


def test_monotone_drift_identical_pair_contributes_zero(ex1):
    p = ([[0.3]], [[-1.2]], [[0.3]], [[-1.2]])
    assert check_monotone_drift(ex1[0], 1.0, pairs=p) == 0.0


def test_monotone_drift_linear_violation():
    problem = scalar_problem(lambda x, y: x.copy())
    p = ([[1.0]], [[0.0]], [[0.0]], [[0.0]])
    assert check_monotone_drift(problem, 0.5, pairs=p) == pytest.approx(0.5)


@pytest.mark.parametrize("example", [1, 2, 3])
def test_affine_diffusions_lipschitz_with_K3_6(example):
    problem, cert = make_example(example)
    assert check_diffusion_lipschitz(problem, 6.0) <= ROUND
    assert check_diffusion_lipschitz(problem, cert.diffusion_lip) <= ROUND


@pytest.mark.parametrize("example", [1, 2, 3])
def test_certificate_constants_hold(example):
    problem, cert = make_example(example)
    assert check_drift_growth(problem, cert.growth_const) <= ROUND
    assert check_drift_poly_lipschitz(problem, *cert.poly_growth) <= ROUND
    assert check_diffusion_curvature(problem, cert.curvature_const) <= ROUND


# -- construction and errors ---------------------------------------------------------


def test_unknown_example():
    with pytest.raises(ConfigurationError) as err:
        make_example(4)
    assert err.value.key == "example"


def test_nonfinite_coefficient_reports_point():
    problem = scalar_problem(lambda x, y: np.where(x > 0.5, np.inf, x))
    with pytest.raises(EvaluationError) as err:
        check_drift_growth(problem, 1.0, domain=(-1.0, 1.0), grid_points=5)
    assert err.value.point is not None


def test_missing_drift_jac_is_allowed_at_construction():
    problem = scalar_problem(lambda x, y: -x)
    assert problem.drift_jac is None


def test_initial_value_shape_checked():
    with pytest.raises(ConfigurationError):
        SdepcaProblem(2, 1, None, None, None, [1.0], 1.0)


def test_certificate_rejects_nonpositive_constants():
    with pytest.raises(ConfigurationError):
        AssumptionCertificate(RationalStep(), alpha=-1.0, lower_bound=(0.5, 0.5, 2.0))
    with pytest.raises(ConfigurationError):
        AssumptionCertificate(RationalStep(), alpha=1.0, lower_bound=(0.5, 0.5, 2.0), poly_growth=(1.0, 0.5))


def test_examples_share_initial_data():
    for k in (1, 2, 3):
        problem, _ = make_example(k)
        assert problem.initial_value.tolist() == [2.0]
        assert problem.horizon == 2.0
        assert math.isclose(problem.drift(np.array([2.0]), np.array([2.0]))[0],
                            {1: -6.0, 2: -4.0, 3: -8.0 + math.sin(2.0)}[k])
