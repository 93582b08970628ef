import numpy as np
import pytest

from sdepca import HAVE_COMPILED, make_example
from sdepca.engine import compiled_supports, default_backend, integrate
from sdepca.errors import ConfigurationError
from sdepca.noise import TickGrid, sample_master
from sdepca.problem import RationalStep
from sdepca.steppers import SOLVERS, StepPolicy, run_path

needs_compiled = pytest.mark.skipif(not HAVE_COMPILED, reason="compiled core not built")

GRID = TickGrid(9, 2.0)


def policy_for(solver, cert, M=16, step=2.0**-6):
    if solver.startswith("adaptive"):
        return StepPolicy(GRID, M=M, step_fn=cert.step_fn, lower_bound=cert.lower_bound)
    return StepPolicy(GRID, uniform_step=step, lower_bound=cert.lower_bound)


@pytest.mark.parametrize("example", [1, 2, 3])
@pytest.mark.parametrize("solver", SOLVERS)
def test_batch_engine_matches_scalar_loop(example, solver):
    problem, cert = make_example(example)
    pol = policy_for(solver, cert, M=64 if example == 2 else 8, step=2.0**-7)
    noises = [sample_master(GRID, problem.noise_dim, 3, i) for i in range(6)]
    batch = integrate(problem, pol, solver, noises, backend="python")
    for i, nz in enumerate(noises):
        if batch.failed[i]:
            continue
        rec = run_path(problem, pol, solver, nz, record_trajectory=True)
        assert batch.steps[i] == rec.steps
        np.testing.assert_allclose(batch.terminal[i], rec.terminal, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(batch.integer_states[i], rec.integer_states, rtol=1e-12, atol=1e-12)
        assert batch.cost[i] == pytest.approx(rec.cost, rel=1e-12)


@needs_compiled
@pytest.mark.parametrize("example", [1, 2, 3])
@pytest.mark.parametrize("solver", SOLVERS)
def test_compiled_matches_python(example, solver):
    problem, cert = make_example(example)
    pol = policy_for(solver, cert, M=64 if example == 2 else 8, step=2.0**-5)
    noises = [sample_master(GRID, problem.noise_dim, 9, i) for i in range(16)]
    a = integrate(problem, pol, solver, noises, backend="python")
    b = integrate(problem, pol, solver, noises, backend="compiled")
    assert b.backend == "compiled"
    np.testing.assert_array_equal(a.status, b.status)
    np.testing.assert_array_equal(a.steps, b.steps)
    np.testing.assert_array_equal(a.min_ticks, b.min_ticks)
    ok = ~a.failed
    np.testing.assert_allclose(a.terminal[ok], b.terminal[ok], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a.cost, b.cost, rtol=1e-12)


def test_custom_step_function_falls_back_to_python():
    problem, cert = make_example(1)
    pol = StepPolicy(GRID, M=4, step_fn=lambda x: 1.0 / (1.0 + x[..., 0] ** 2))
    assert not compiled_supports(problem, pol, "adaptive_milstein")
    res = integrate(problem, pol, "adaptive_milstein", [sample_master(GRID, 1, 0, 0)], backend="compiled")
    assert res.backend == "python"


def test_backend_env_override(monkeypatch):
    monkeypatch.setenv("SDEPCA_BACKEND", "python")
    assert default_backend() == "python"


def test_failures_are_flagged_not_raised():
    problem, _ = make_example(1)
    pol = StepPolicy(GRID, uniform_step=0.25)
    noises = [sample_master(GRID, 1, 1, i) for i in range(40)]
    for backend in ("python",) + (("compiled",) if HAVE_COMPILED else ()):
        res = integrate(problem, pol, "uniform_milstein", noises, backend=backend, blowup=50.0)
        assert res.failed.any()
        assert np.all(res.fail_step[res.failed] >= 0)
        assert np.all(res.fail_step[~res.failed] == -1)


def test_mismatched_noise_rejected():
    problem, cert = make_example(2)
    pol = StepPolicy(GRID, M=2, step_fn=RationalStep())
    with pytest.raises(ConfigurationError):
        integrate(problem, pol, "adaptive_milstein", [sample_master(GRID, 1, 0, 0)])
    with pytest.raises(ConfigurationError):
        integrate(problem, pol, "adaptive_milstein", [])
    with pytest.raises(ConfigurationError):
        integrate(problem, pol, "adaptive_milstein", [sample_master(GRID, 2, 0, 0)], backend="gpu")
