import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from quasipot import mcoracle
from quasipot.errors import Diverged, NotAttractor, ParseError
from quasipot.model import EquilibriumPoint, custom_model, refine_equilibrium

OU = np.array([[-1.0, 2.0], [0.0, -1.0]])


def config(**kw):
    base = {"epsilon": 0.05, "dt": 0.01, "n_steps": 100, "n_paths": 4, "seed": 7}
    base.update(kw)
    return mcoracle.SimConfig(**base)


def test_config_validation():
    with pytest.raises(ValidationError):
        config(burn_in=100)
    with pytest.raises(ValidationError):
        config(dt=0.0)
    with pytest.raises(ValidationError):
        config(epsilon=-1.0)
    with pytest.raises(ValidationError):
        config(min_batches=1)
    assert config(seed=2**64 - 1).seed == 2**64 - 1


def test_stability_guard(ou_model):
    ep = refine_equilibrium(ou_model, [0.0, 0.0])
    config(dt=0.1).check_stable(ep)
    with pytest.raises(ValueError):
        config(dt=0.2).check_stable(ep)


def test_stability_guard_on_plain_runs(ou_model):
    with pytest.raises(ValueError, match="start point"):
        mcoracle.simulate(ou_model, [0.5, 0.0], config(dt=0.2))
    region = mcoracle.parse_region("x1 > 1", 2)
    with pytest.raises(ValueError, match="start point"):
        mcoracle.mean_exit_time(ou_model, [0.0, 0.0], region, config(dt=0.2))
    # the bound uses the local Jacobian, 3 x1^2 = 12 at x1 = 2
    cubic = custom_model(1, ["-x1^3"], [["1"]])
    mcoracle.simulate(cubic, [2.0], config(dt=0.008, n_steps=10))
    with pytest.raises(ValueError):
        mcoracle.simulate(cubic, [2.0], config(dt=0.01, n_steps=10))


def test_noise_free_run_is_euler(ou_model):
    x0 = np.array([1.0, -0.5])
    run = mcoracle.simulate(ou_model, x0, config(epsilon=0.0, n_steps=10, n_paths=3))
    expected = np.linalg.matrix_power(np.eye(2) + 0.01 * OU, 10) @ x0
    assert_allclose(run.final, np.tile(expected, (3, 1)), rtol=1e-13)
    assert not run.diverged.any()


def test_trajectory_recording(ou_model):
    run = mcoracle.simulate(ou_model, [0.0, 0.0], config(n_steps=50, chunk=16), record=True)
    assert run.trajectory.shape == (51, 4, 2)
    assert_allclose(run.trajectory[0], 0.0)
    assert_allclose(run.trajectory[-1], run.final)


def test_determinism_and_grouping(ou_model):
    cfg = config(n_steps=300, n_paths=6, chunk=64)
    a = mcoracle.simulate(ou_model, [0.0, 0.0], cfg)
    b = mcoracle.simulate(ou_model, [0.0, 0.0], cfg)
    c = mcoracle.simulate(ou_model, [0.0, 0.0], cfg, threads=4)
    assert np.array_equal(a.final, b.final)
    assert np.array_equal(a.final, c.final)
    d = mcoracle.simulate(ou_model, [0.0, 0.0], config(n_steps=300, n_paths=6, chunk=64, seed=8))
    assert not np.array_equal(a.final, d.final)


def test_path_draws_do_not_depend_on_path_count(ou_model):
    small = mcoracle.simulate(ou_model, [0.0, 0.0], config(n_paths=2))
    large = mcoracle.simulate(ou_model, [0.0, 0.0], config(n_paths=5))
    assert np.array_equal(small.final, large.final[:2])


def test_noise_enters_only_through_diffusion():
    m = custom_model(2, ["0", "0"], [["0", "0"], ["0", "1"]])
    run = mcoracle.simulate(m, [0.0, 0.0], config(n_steps=200))
    assert np.all(run.final[:, 0] == 0.0)
    assert np.all(run.final[:, 1] != 0.0)


def test_state_dependent_diffusion_runs():
    m = custom_model(1, ["-x1"], [["1 + x1^2/4"]])
    run = mcoracle.simulate(m, [0.0], config(n_steps=500, n_paths=8))
    assert np.all(np.isfinite(run.final))


def test_all_paths_diverge():
    m = custom_model(1, ["x1^2"], [["1"]])
    with pytest.raises(Diverged):
        mcoracle.simulate(m, [2.0], config(epsilon=0.0, dt=0.02, n_steps=200, n_paths=2))


def test_scalar_ou_variance():
    m = custom_model(1, ["-x1"], [["1"]])
    ep = refine_equilibrium(m, [0.3])
    est = mcoracle.stationary_covariance(
        m, ep, config(epsilon=0.1, n_steps=4000, n_paths=50, burn_in=400)
    )
    assert est.n_effective == 50
    assert est.n_samples == 50 * 3600
    assert abs(est.covariance[0, 0] - 0.1) <= 3.5 * est.stderr[0, 0]


def test_covariance_scales_with_epsilon(ou_model):
    ep = refine_equilibrium(ou_model, [0.0, 0.0])
    cfg = config(n_steps=2000, n_paths=4, burn_in=200)
    full = mcoracle.stationary_covariance(ou_model, ep, cfg)
    half = mcoracle.stationary_covariance(ou_model, ep, cfg.model_copy(update={"epsilon": 0.025}))
    assert_allclose(half.covariance, 0.5 * full.covariance, rtol=1e-9)


def test_few_paths_are_split_into_batches(ou_model):
    ep = refine_equilibrium(ou_model, [0.0, 0.0])
    est = mcoracle.stationary_covariance(ou_model, ep, config(n_steps=1000, n_paths=3, burn_in=100))
    assert est.n_effective == 3 * 4
    assert np.all(np.isfinite(est.stderr))


def test_covariance_needs_attractor():
    saddle = EquilibriumPoint.from_jacobian([0.0, 0.0], np.diag([1.0, -1.0]))
    m = custom_model(2, ["x1", "-x2"], [["1", "0"], ["0", "1"]])
    with pytest.raises(NotAttractor):
        mcoracle.stationary_covariance(m, saddle, config())


def test_region_parsing():
    region = mcoracle.parse_region("x1 > 0", 2)
    assert list(region(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 5.0]]))) == [True, False, False]
    assert list(mcoracle.parse_region("x1^2 + x2^2 >= 1", 2)([[1.0, 0.0], [0.5, 0.5]])) == [True, False]


@pytest.mark.parametrize(
    ("text", "offset"),
    [("x1", 2), ("x1 < 0 < 1", 7), ("x1 > ", 4), ("x1 + > 0", 5)],
)
def test_region_errors(text, offset):
    with pytest.raises(ParseError) as info:
        mcoracle.parse_region(text, 1)
    assert info.value.offset == offset


def test_exit_region_everything(ou_model):
    est = mcoracle.mean_exit_time(ou_model, [0.0, 0.0], mcoracle.parse_region("1 > 0", 2), config())
    assert est.met == 0.0
    assert est.n_exited == 4


def test_exit_time_of_constant_drift():
    m = custom_model(1, ["1"], [["1"]])
    region = mcoracle.parse_region("x1 > 0.55", 1)
    est = mcoracle.mean_exit_time(m, [0.0], region, config(epsilon=0.0, dt=0.1, n_steps=20))
    assert est.met == pytest.approx(0.6)
    assert est.stderr == 0.0
    assert est.n_censored == 0


def test_censored_paths():
    m = custom_model(1, ["-x1"], [["1"]])
    region = mcoracle.parse_region("x1 > 100", 1)
    est = mcoracle.mean_exit_time(m, [0.0], region, config(n_steps=50))
    assert math.isnan(est.met)
    assert math.isnan(est.stderr)
    assert est.n_censored == 4
    assert est.n_exited == 0


def test_exit_times_independent_of_threads():
    m = custom_model(1, ["-x1"], [["1"]])
    region = mcoracle.parse_region("x1 > 0.2", 1)
    cfg = config(epsilon=0.1, n_steps=2000, n_paths=8, chunk=128)
    a = mcoracle.mean_exit_time(m, [0.0], region, cfg)
    b = mcoracle.mean_exit_time(m, [0.0], region, cfg, threads=3)
    assert np.array_equal(a.times, b.times, equal_nan=True)
    assert a.n_exited > 0


def test_mean_error_is_first_order_in_dt():
    m = custom_model(1, ["-x1"], [["1"]])
    errors = []
    for dt, steps in ((0.1, 10), (0.05, 20)):
        run = mcoracle.simulate(m, [1.0], config(epsilon=1e-6, dt=dt, n_steps=steps, n_paths=64))
        mean = float(np.mean(run.final))
        assert mean == pytest.approx((1.0 - dt) ** steps, abs=5e-4)
        errors.append(abs(mean - math.exp(-1.0)))
    assert errors[0] / errors[1] == pytest.approx(2.0, rel=0.1)


def test_paths_leaving_the_drift_domain_are_dropped():
    m = custom_model(1, ["-x1 + 0.1*sqrt(1 + x1) - 0.1"], [["1"]])
    run = mcoracle.simulate(m, [0.0], config(epsilon=0.5, n_steps=200, n_paths=64))
    lost = int(run.diverged.sum())
    assert 0 < lost < 64
    assert np.all(np.isfinite(run.final))


def test_paths_leaving_the_region_domain_are_dropped():
    m = custom_model(1, ["-x1"], [["1"]])
    region = mcoracle.parse_region("sqrt(x1 + 1) > 1.2", 1)
    est = mcoracle.mean_exit_time(m, [0.0], region, config(epsilon=0.5, n_steps=2000, n_paths=64))
    assert est.n_exited > 0
    assert est.n_exited + est.n_censored < 64
    assert np.isfinite(est.met)
