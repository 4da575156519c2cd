import numpy as np
import pytest

from bhcp.forward import ForwardConfig, forward_solve
from bhcp.grid import Field, make_grid
from bhcp.observe import (
    NoiseModel,
    empirical_inner,
    empirical_norm,
    load_observation,
    observe,
    save_observation,
    uniform_sensors,
)
from bhcp.operators import Coefficients, assemble

PI = np.pi


class TestUniformSensors:
    def test_square_20_per_axis(self):
        g = make_grid(2, [[0, PI], [0, PI]], 41)
        s = uniform_sensors(g, 20)
        assert s.n == 400
        assert s.w2[0] == pytest.approx(PI**2 / 400, rel=1e-14)
        assert s.w2.sum() == pytest.approx(g.volume, abs=1e-9)

    def test_smallest_1d_layout(self):
        g = make_grid(1, (0, 1), 5)
        s = uniform_sensors(g, 2)
        d_max, d_min = s.fill_distances
        assert s.n == 2 and np.isfinite(d_max / d_min)

    def test_dense_lattice(self):
        g = make_grid(2, [[0, PI], [0, PI]], 101)
        assert uniform_sensors(g, 50).n == 2500

    def test_misaligned_lattice_rejected(self):
        g = make_grid(2, [[0, PI], [0, PI]], 17)
        with pytest.raises(ValueError):
            uniform_sensors(g, 20)

    def test_sensors_sit_on_nodes(self):
        g = make_grid(2, [[0, PI], [0, 2.0]], (41, 21))
        s = uniform_sensors(g, 10)
        assert np.allclose(g.nodes()[s.node_index], s.coords, rtol=0, atol=1e-12)


class TestEmpiricalNorm:
    def test_constant_field(self):
        g = make_grid(2, [[0, PI], [0, PI]], 41)
        s = uniform_sensors(g, 20)
        assert empirical_norm(s, np.ones(s.n)) == pytest.approx(PI, rel=1e-12)

    def test_four_point_example(self):
        # w_i^2 = 1/4 each on the unit square, values 1..4 -> sqrt(7.5)
        g = make_grid(2, [[0, 1], [0, 1]], 5)
        s = uniform_sensors(g, 2)
        assert s.w2 == pytest.approx([0.25] * 4)
        assert empirical_norm(s, np.array([1.0, 2, 3, 4])) == pytest.approx(np.sqrt(7.5), rel=1e-14)

    def test_symmetry(self):
        g = make_grid(1, (0, 1), 9)
        s = uniform_sensors(g, 4)
        rng = np.random.default_rng(0)
        u, v = rng.standard_normal(4), rng.standard_normal(4)
        assert empirical_inner(s, u, v) == empirical_inner(s, v, u)

    def test_length_mismatch(self):
        g = make_grid(1, (0, 1), 9)
        s = uniform_sensors(g, 4)
        with pytest.raises(ValueError):
            empirical_norm(s, np.ones(5))

    def test_norm_consistency_second_order_in_fill_distance(self):
        # oracle: integral of x^4 over the square is pi^6 / 5; a field
        # without boundary zeros keeps the leading midpoint error term alive
        g = make_grid(2, [[0, PI], [0, PI]], 81)
        f = Field.from_function(g, lambda x, y: x**2)
        exact = np.sqrt(PI**6 / 5)
        errs, dmaxes = [], []
        for p in (5, 8, 10, 20, 40):
            s = uniform_sensors(g, p)
            errs.append(abs(empirical_norm(s, s.sample(f)) - exact))
            dmaxes.append(s.fill_distances[0])
        slope = np.polyfit(np.log(dmaxes), np.log(errs), 1)[0]
        assert 1.7 <= slope <= 2.3


class TestNoiseModel:
    def test_seeded_determinism(self):
        n1 = NoiseModel("gaussian", 0.05, seed=7).draw(100)
        n2 = NoiseModel("gaussian", 0.05, seed=7).draw(100)
        assert np.array_equal(n1, n2)

    def test_replication_streams_differ(self):
        m = NoiseModel("gaussian", 0.05, seed=7)
        assert not np.array_equal(m.draw(100, rep=0), m.draw(100, rep=1))

    def test_rademacher_values(self):
        draws = NoiseModel("rademacher", 0.3, seed=1).draw(1000)
        assert set(np.unique(draws)) == {-0.3, 0.3}

    def test_uniform_scaled_to_sigma(self):
        draws = NoiseModel("uniform", 0.2, seed=2).draw(200_000)
        assert abs(draws).max() <= np.sqrt(3) * 0.2 + 1e-12
        assert draws.std() == pytest.approx(0.2, rel=0.02)

    def test_zero_mean_many_draws(self):
        # mean of 1e4 draws of length n concentrates within 3 sigma / sqrt(1e4 n)
        n, reps, sigma = 25, 10_000, 0.1
        m = NoiseModel("gaussian", sigma, seed=3)
        total = sum(m.draw(n, rep=r).sum() for r in range(reps))
        mean = total / (n * reps)
        assert abs(mean) <= 3 * sigma / np.sqrt(n * reps)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            NoiseModel("laplace", 0.1, seed=0)


@pytest.fixture(scope="module")
def setup():
    g = make_grid(2, [[0, PI], [0, PI]], 41)
    op = assemble(g, Coefficients.constant(g, 1.0, 0.0))
    cfg = ForwardConfig(op, T=0.1, dt=2e-3)
    s = uniform_sensors(g, 20)
    f = Field.from_function(g, lambda x, y: np.sin(2 * x) * np.sin(2 * y))
    return g, cfg, s, f


class TestObserve:

    def test_noiseless_matches_forward_samples(self, setup):
        _, cfg, s, f = setup
        obs = observe(cfg, f, s, NoiseModel("gaussian", 0.0, seed=0))
        clean = s.sample(forward_solve(cfg, f, cfg.T))
        assert np.array_equal(obs.values, clean)

    def test_noise_sample_std(self, setup):
        _, cfg, s, f = setup
        obs = observe(cfg, f, s, NoiseModel("gaussian", 0.05, seed=0))
        clean = s.sample(forward_solve(cfg, f, cfg.T))
        resid = obs.values - clean
        assert resid.std() == pytest.approx(0.05, rel=0.10)

    def test_rademacher_residuals(self, setup):
        _, cfg, s, f = setup
        obs = observe(cfg, f, s, NoiseModel("rademacher", 0.05, seed=1))
        clean = s.sample(forward_solve(cfg, f, cfg.T))
        assert np.allclose(np.abs(obs.values - clean), 0.05, rtol=0, atol=1e-14)

    def test_seeded_bit_identical(self, setup):
        _, cfg, s, f = setup
        a = observe(cfg, f, s, NoiseModel("gaussian", 0.05, seed=9))
        b = observe(cfg, f, s, NoiseModel("gaussian", 0.05, seed=9))
        assert np.array_equal(a.values, b.values)

    def test_csv_round_trip(self, setup, tmp_path):
        g, cfg, s, f = setup
        obs = observe(cfg, f, s, NoiseModel("gaussian", 0.05, seed=4))
        csv, meta = tmp_path / "obs.csv", tmp_path / "obs.json"
        save_observation(obs, csv, meta)
        assert csv.read_text().splitlines()[0] == "x,y,m"
        back = load_observation(g, csv, meta)
        assert np.array_equal(back.values, obs.values)
        assert np.array_equal(back.sensors.node_index, obs.sensors.node_index)
        assert back.provenance["noise"]["sigma"] == 0.05
