import numpy as np
import pytest
from scipy.stats import norm

from bhcp.analysis import (
    fit_slope,
    interior_decay,
    mc_errors,
    qq_correlation,
    qq_points,
    sweep_lambda,
)
from bhcp.forward import ForwardConfig
from bhcp.grid import Field, make_grid
from bhcp.observe import NoiseModel, observe, uniform_sensors
from bhcp.operators import Coefficients, assemble
from bhcp.tikhonov import TikhonovProblem, minimize

PI = np.pi


@pytest.fixture(scope="module")
def small_problem():
    grid = make_grid(2, [[0, PI], [0, PI]], 17)
    op = assemble(grid, Coefficients.constant(grid, 1.0, 0.0))
    cfg = ForwardConfig(op, T=0.1, dt=5e-3)
    sensors = uniform_sensors(grid, 8)
    f_star = Field.from_function(grid, lambda x, y: np.sin(2 * x) * np.sin(2 * y))
    return grid, cfg, sensors, f_star


class TestFitSlope:
    def test_exact_line(self):
        fit = fit_slope([1, 2, 3], [2, 4, 6], loglog=False)
        assert fit.slope == pytest.approx(2.0, abs=1e-12)
        assert fit.correlation == pytest.approx(1.0, abs=1e-12)

    def test_exact_power_law(self):
        xs = np.logspace(0, 2, 5)
        fit = fit_slope(xs, xs ** (4 / 3), loglog=True)
        assert fit.slope == pytest.approx(4 / 3, abs=1e-10)

    def test_rejects_nonpositive_loglog(self):
        with pytest.raises(ValueError):
            fit_slope([1, 2, 3], [1.0, -1.0, 2.0], loglog=True)

    def test_rejects_too_few_points(self):
        with pytest.raises(ValueError):
            fit_slope([1, 2], [1, 2], loglog=False)


class TestQQ:
    def test_exact_normal_quantiles_on_diagonal(self):
        n = 200
        sample = norm.ppf((np.arange(1, n + 1) - 0.5) / n)
        theo, z = qq_points(sample)
        assert np.allclose(theo, z, atol=5e-2)
        assert qq_correlation(sample) >= 0.9999

    def test_affine_invariance(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(500)
        t1, z1 = qq_points(x)
        t2, z2 = qq_points(3.5 * x - 11.0)
        assert np.allclose(z1, z2, atol=1e-12)

    def test_heavy_tails_break_linearity(self):
        rng = np.random.default_rng(1)
        heavy = rng.standard_normal(1000) ** 3
        assert qq_correlation(heavy) < 0.99

    def test_degenerate_sample_rejected(self):
        with pytest.raises(ValueError):
            qq_points(np.ones(50))


class TestMcErrors:
    def test_zero_noise_gives_identical_errors(self, small_problem):
        _, cfg, sensors, f_star = small_problem
        s = mc_errors(cfg, f_star, sensors, NoiseModel("gaussian", 0.0, seed=0), 1e-3, 8)
        assert np.allclose(s.errors, s.errors[0], rtol=1e-12)

    def test_deterministic_given_seed(self, small_problem):
        _, cfg, sensors, f_star = small_problem
        noise = NoiseModel("gaussian", 0.05, seed=4)
        a = mc_errors(cfg, f_star, sensors, noise, 1e-3, 16)
        b = mc_errors(cfg, f_star, sensors, noise, 1e-3, 16)
        assert np.array_equal(a.errors, b.errors)

    def test_doubling_sigma_doubles_spread(self, small_problem):
        _, cfg, sensors, f_star = small_problem
        s1 = mc_errors(cfg, f_star, sensors, NoiseModel("gaussian", 0.05, seed=7), 1e-3, 200)
        s2 = mc_errors(cfg, f_star, sensors, NoiseModel("gaussian", 0.10, seed=7), 1e-3, 200)
        assert 1.6 <= s2.std / s1.std <= 2.4

    def test_disjoint_halves_agree(self, small_problem):
        _, cfg, sensors, f_star = small_problem
        s = mc_errors(cfg, f_star, sensors, NoiseModel("gaussian", 0.05, seed=8), 1e-3, 400)
        h1, h2 = s.errors[:200], s.errors[200:]
        assert abs(h1.mean() - h2.mean()) <= 3 * s.std / np.sqrt(200)

    def test_dense_and_iterative_agree(self, small_problem):
        _, cfg, sensors, f_star = small_problem
        noise = NoiseModel("gaussian", 0.05, seed=9)
        dense = mc_errors(cfg, f_star, sensors, noise, 1e-3, 4, solver="dense")
        iterative = mc_errors(cfg, f_star, sensors, noise, 1e-3, 4, solver="iterative")
        assert np.allclose(dense.errors, iterative.errors, rtol=1e-6)

    def test_parallel_matches_serial(self, small_problem):
        _, cfg, sensors, f_star = small_problem
        noise = NoiseModel("gaussian", 0.05, seed=10)
        serial = mc_errors(cfg, f_star, sensors, noise, 1e-3, 8, solver="iterative", jobs=1)
        parallel = mc_errors(cfg, f_star, sensors, noise, 1e-3, 8, solver="iterative", jobs=2)
        assert np.array_equal(serial.errors, parallel.errors)


class TestSweepLambda:
    def test_single_point_grid(self, small_problem):
        _, cfg, sensors, f_star = small_problem
        res = sweep_lambda(cfg, f_star, sensors, NoiseModel("gaussian", 0.05, seed=0), [1e-3])
        assert res.lambda_star == 1e-3

    def test_noiseless_error_decreases_with_lambda(self, small_problem):
        _, cfg, sensors, f_star = small_problem
        lams = np.logspace(-8, -1, 15)
        res = sweep_lambda(cfg, f_star, sensors, NoiseModel("gaussian", 0.0, seed=0), lams)
        # no noise to amplify: smaller lambda always fits better, down to the
        # solver floor
        meaningful = res.errors > 1e-8
        assert np.all(np.diff(res.errors[meaningful]) >= -1e-12)

    def test_dense_and_iterative_agree(self, small_problem):
        _, cfg, sensors, f_star = small_problem
        noise = NoiseModel("gaussian", 0.05, seed=2)
        lams = [1e-4, 1e-3, 1e-2]
        dense = sweep_lambda(cfg, f_star, sensors, noise, lams, solver="dense")
        iterative = sweep_lambda(cfg, f_star, sensors, noise, lams, solver="iterative")
        assert np.allclose(dense.errors, iterative.errors, rtol=1e-5)


class TestInteriorDecay:
    def test_degenerate_reconstruction_rejected(self, small_problem):
        _, cfg, _, f_star = small_problem
        with pytest.raises(ValueError):
            interior_decay(f_star, f_star, cfg, [0.0, 0.05, 0.1], 1e-3)

    def test_errors_shrink_toward_terminal_time(self, small_problem):
        _, cfg, sensors, f_star = small_problem
        obs = observe(cfg, f_star, sensors, NoiseModel("gaussian", 0.02, seed=3))
        res = minimize(TikhonovProblem(cfg, obs, 1e-4))
        times = np.arange(0, cfg.steps + 1, 2) * cfg.dt
        dec = interior_decay(res.f, f_star, cfg, times, 1e-4, sensors=sensors)
        assert dec.errors_l2[-1] <= dec.errors_l2[0]
        assert np.all(np.diff(dec.errors_l2) <= 1e-12)
        assert dec.fit.slope < 0 and dec.predicted_slope < 0
        assert np.all(np.isfinite(dec.errors_n))

    def test_times_off_step_grid_rejected(self, small_problem):
        _, cfg, _, f_star = small_problem
        bumped = Field(f_star.grid, f_star.values * 1.1)
        with pytest.raises(ValueError):
            interior_decay(bumped, f_star, cfg, [0.0033], 1e-3)
