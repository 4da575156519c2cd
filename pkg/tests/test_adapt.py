import numpy as np
import pytest

from bhcp.adapt import adapt_lambda, estimate_h2, lambda_step, save_trace
from bhcp.forward import ForwardConfig
from bhcp.grid import Field, l2_norm, make_grid
from bhcp.observe import NoiseModel, Observation, observe, uniform_sensors
from bhcp.operators import Coefficients, assemble

PI = np.pi


class TestLambdaStep:
    def test_two_dimensional_arithmetic(self):
        # (1 * 100^-1/2 * 0.1 / 1)^(4/3) = 10^(-8/3)
        assert lambda_step(0.1, 1.0, 1.0, 100, 2) == pytest.approx(10 ** (-8 / 3), rel=1e-12)

    def test_one_dimensional_exponent(self):
        # exponent 1/(1/2 + 1/8) = 8/5
        assert lambda_step(0.1, 1.0, 1.0, 100, 1) == pytest.approx(0.01 ** 1.6, rel=1e-12)

    def test_zero_misfit_degenerates_to_zero(self):
        assert lambda_step(0.0, 1.0, 1.0, 100, 2) == 0.0

    def test_zero_field_norm_rejected(self):
        with pytest.raises(ValueError):
            lambda_step(0.1, 0.0, 1.0, 100, 2)


@pytest.fixture(scope="module")
def smooth_observation(smooth_case):
    grid, op, cfg, sensors, f_star = smooth_case
    obs = observe(cfg, f_star, sensors, NoiseModel("gaussian", 0.05, seed=0))
    return grid, cfg, sensors, f_star, obs


class TestEstimateH2:
    def test_zero_data(self, smooth_observation):
        grid, cfg, sensors, _, _ = smooth_observation
        obs0 = Observation(sensors=sensors, values=np.zeros(sensors.n))
        assert estimate_h2(obs0, grid) == 0.0

    def test_noiseless_close_to_closed_form(self, smooth_case):
        # closed form for exp(-0.8) sin(2x)sin(2y):
        # sqrt(pi^2/4 * (1 + 8 + 64)) * exp(-0.8)
        grid, op, cfg, sensors, f_star = smooth_case
        obs = observe(cfg, f_star, sensors, NoiseModel("gaussian", 0.0, seed=0))
        reference = np.exp(-0.8) * (PI / 2) * np.sqrt(73.0)
        h = estimate_h2(obs, grid)
        assert abs(h - reference) / reference <= 0.15

    def test_noise_robustness(self, smooth_case, smooth_observation):
        grid, op, cfg, sensors, f_star = smooth_case
        _, _, _, _, obs_noisy = smooth_observation
        obs_clean = observe(cfg, f_star, sensors, NoiseModel("gaussian", 0.0, seed=0))
        h_clean = estimate_h2(obs_clean, grid)
        h_noisy = estimate_h2(obs_noisy, grid)
        assert abs(h_noisy - h_clean) / h_clean <= 0.25

    def test_requires_full_lattice(self, smooth_observation):
        grid, cfg, sensors, _, obs = smooth_observation
        from bhcp.observe import SensorSet

        broken = SensorSet(
            grid=grid,
            coords=sensors.coords[:-1],
            node_index=sensors.node_index[:-1],
            w2=sensors.w2[:-1],
        )
        obs2 = Observation(sensors=broken, values=obs.values[:-1])
        with pytest.raises(ValueError):
            estimate_h2(obs2, grid)


class TestAdaptLambda:
    def test_smooth_case_converges(self, smooth_observation):
        grid, cfg, sensors, f_star, obs = smooth_observation
        trace, result = adapt_lambda(obs, cfg, lambda0=1.0)
        assert trace.converged
        assert len(trace) <= 15
        assert np.all(trace.lambdas > 0)
        # misfit is nonincreasing along the monotone lambda descent
        assert np.all(np.diff(trace.misfits) <= 1e-12)
        # the settled weight reproduces itself through the update rule
        f_norm = trace.f_norms[-1]
        lam_again = lambda_step(trace.misfits[-1], f_norm, trace.h_est, sensors.n, grid.dim)
        assert abs(lam_again - trace.final_lambda) <= 1e-3 * max(lam_again, 1.0)

    def test_recovers_the_truth_reasonably(self, smooth_observation):
        _, cfg, _, f_star, obs = smooth_observation
        _, result = adapt_lambda(obs, cfg, lambda0=1.0)
        assert l2_norm(result.f - f_star) / l2_norm(f_star) <= 0.3

    def test_default_initial_guess_reaches_same_fixed_point(self, smooth_observation):
        _, cfg, sensors, _, obs = smooth_observation
        t1, _ = adapt_lambda(obs, cfg, lambda0=1.0)
        t2, _ = adapt_lambda(obs, cfg)  # n^(-4/(d+4))
        assert t2.final_lambda == pytest.approx(t1.final_lambda, rel=0.05)

    def test_noiseless_data_drives_lambda_to_floor(self):
        grid = make_grid(2, [[0, PI], [0, PI]], 17)
        op = assemble(grid, Coefficients.constant(grid, 1.0, 0.0))
        cfg = ForwardConfig(op, T=0.1, dt=5e-3)
        sensors = uniform_sensors(grid, 4)
        f_star = Field.from_function(grid, lambda x, y: np.sin(x) * np.sin(y))
        obs = observe(cfg, f_star, sensors, NoiseModel("gaussian", 0.0, seed=0))
        # default tol stops once steps are tiny; a tight tol rides the
        # superlinear descent all the way to the positivity floor
        trace, _ = adapt_lambda(obs, cfg, tol_lambda=1e-16, max_outer=12)
        assert trace.final_lambda <= 1e-10
        assert np.all(np.diff(trace.lambdas) <= 0)
        assert any("lambda_floor" in f for f in trace.flags)

    def test_trace_csv(self, tmp_path, smooth_observation):
        _, cfg, _, _, obs = smooth_observation
        trace, _ = adapt_lambda(obs, cfg, lambda0=1.0)
        path = tmp_path / "trace.csv"
        save_trace(trace, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "j,lambda,misfit,f_norm,J"
        assert len(lines) == len(trace) + 1

    def test_max_outer_respected(self, smooth_observation):
        _, cfg, _, _, obs = smooth_observation
        trace, _ = adapt_lambda(obs, cfg, lambda0=1.0, max_outer=2)
        assert len(trace) <= 2 and not trace.converged
