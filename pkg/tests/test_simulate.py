import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from hdht import calibrate as cal
from hdht import simulate as sim
from hdht.collection import LASSO, S1, SLEQK
from hdht.errors import NotPositiveDefinite


class TestScenarios:
    def test_table_counts(self):
        assert sim.sparsity_count(200, 5 / 8) == 7
        assert sim.sparsity_count(200, 7 / 8) == 1
        assert sim.sparsity_count(50, 5 / 8) == 4
        assert sim.sparsity_count(8, 0.0) == 8
        assert sim.sparsity_count(200, None) == 0

    def test_layout(self):
        b1, b2 = sim.make_scenario("4", 50, 200, 0.3)
        mu = math.sqrt(2 * 0.3 * math.log(200))
        assert_allclose(b1[:7], mu)
        assert np.count_nonzero(b1) == 7
        assert_allclose(b2[:8], mu)
        assert np.count_nonzero(b2) == 8
        assert np.count_nonzero(b2 - b1) == 1

    def test_null_scenarios(self):
        b1, b2 = sim.make_scenario("H00", 25, 50, 0.4)
        assert not b1.any() and not b2.any()
        b1, b2 = sim.make_scenario("H0", 25, 50, 0.4)
        assert_array_equal(b1, b2)
        assert b1.any()

    def test_zero_magnitude(self):
        b1, b2 = sim.make_scenario("3", 50, 200, 0.0)
        assert not b1.any() and not b2.any()

    def test_scenario_one_specific_only(self):
        b1, b2 = sim.make_scenario("1", 50, 200, 0.5)
        assert not b1.any()
        assert np.count_nonzero(b2) == 7

    def test_unknown(self):
        with pytest.raises(ValueError):
            sim.make_scenario("9", 10, 10, 0.1)
        with pytest.raises(ValueError):
            sim.signal_magnitude(-0.1, 10)


class TestCovariance:
    def test_identity(self):
        assert_array_equal(sim.make_covariance(sim.CovarianceSpec(), 4), np.eye(4))

    def test_power_decay(self):
        spec = sim.CovarianceSpec(sim.POWER_DECAY, rho=0.75, permute=False)
        expected = [[1, 0.75, 0.5625], [0.75, 1, 0.75], [0.5625, 0.75, 1]]
        assert_allclose(sim.make_covariance(spec, 3), expected)

    def test_power_decay_permuted(self):
        spec = sim.CovarianceSpec(sim.POWER_DECAY)
        a = sim.make_covariance(spec, 30, seed=1)
        b = sim.make_covariance(spec, 30, seed=2)
        ref = sim.power_decay(30, 0.75)
        assert not np.array_equal(a, b)
        assert_allclose(np.sort(a.ravel()), np.sort(ref.ravel()))

    def test_clustered_partner_count(self):
        spec = sim.CovarianceSpec(sim.CLUSTERED_GGM)
        counts = []
        for seed in range(50):
            sigma = sim.make_covariance(spec, 200, seed=seed)
            np.linalg.cholesky(sigma)
            assert_allclose(np.diag(sigma), 1.0)
            off = np.abs(sigma - np.eye(200)) > 0.2
            counts.append(off.sum(axis=1).mean())
        assert 7.0 <= np.mean(counts) <= 13.0

    def test_clustered_structure(self):
        spec = sim.CovarianceSpec(sim.CLUSTERED_GGM, intra=0.2)
        omega = sim.clustered_precision(30, spec, np.random.default_rng(0))
        block = np.arange(30) * 3 // 30
        within = (block[:, None] == block[None, :]) & ~np.eye(30, dtype=bool)
        assert np.count_nonzero(omega[within]) > np.count_nonzero(omega[~within & ~np.eye(30, dtype=bool)])
        assert np.all(omega[~np.eye(30, dtype=bool)] <= 0)
        np.linalg.cholesky(omega)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            sim.CovarianceSpec("bogus")
        with pytest.raises(ValueError):
            sim.CovarianceSpec(sim.POWER_DECAY, rho=1.0)
        with pytest.raises(ValueError):
            sim.CovarianceSpec(sim.CLUSTERED_GGM, intra=0.0)


class TestDraws:
    def test_moments(self):
        d = sim.draw_two_sample(np.zeros(3), np.zeros(3), np.eye(3), 10_000, 10_000, seed=5)
        se = 1 / math.sqrt(10_000)
        assert np.all(np.abs(d.x1.mean(axis=0)) < 3 * se)
        assert np.all(np.abs(d.x2.var(axis=0) - 1) < 3 * math.sqrt(2) * se)

    def test_noiseless(self):
        beta = np.array([1.0, -2.0, 0.5])
        d = sim.draw_two_sample(beta, 2 * beta, np.eye(3), 8, 9, sigma1=0.0, sigma2=0.0, seed=1)
        assert_array_equal(d.y1, d.x1 @ beta)
        assert_array_equal(d.y2, d.x2 @ (2 * beta))

    def test_reproducible(self):
        a = sim.draw_two_sample(np.ones(4), np.ones(4), np.eye(4), 10, 10, seed=(3, 1))
        b = sim.draw_two_sample(np.ones(4), np.ones(4), np.eye(4), 10, 10, seed=(3, 1))
        c = sim.draw_two_sample(np.ones(4), np.ones(4), np.eye(4), 10, 10, seed=(3, 2))
        assert_array_equal(a.x1, b.x1) and assert_array_equal(a.y2, b.y2)
        assert not np.array_equal(a.x1, c.x1)

    def test_indefinite(self):
        with pytest.raises(NotPositiveDefinite):
            sim.draw_two_sample(np.ones(2), np.ones(2), np.array([[1, 2], [2, 1.0]]), 5, 5)


class TestKullback:
    def test_equal_laws(self):
        b = np.array([1.0, 2.0])
        assert sim.kullback_semidistance(b, 1.5, b, 1.5, np.eye(2), np.eye(2)) == 0.0

    def test_variance_only(self):
        b = np.zeros(3)
        assert sim.kullback_semidistance(b, 1.0, b, 2.0, np.eye(3), np.eye(3)) == pytest.approx(1.125)

    def test_identity_design(self):
        b1, b2 = np.array([1.0, 0, 2]), np.array([0.5, 1, 2])
        assert sim.kullback_semidistance(b1, 1, b2, 1, np.eye(3), np.eye(3)) == pytest.approx(1.25)

    @given(st.integers(0, 2**32 - 1))
    def test_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((2, 4, 4))
        c1, c2 = a @ a.T, b @ b.T
        b1, b2 = rng.standard_normal((2, 4))
        s1, s2 = rng.uniform(0.2, 3, 2)
        k = sim.kullback_semidistance(b1, s1, b2, s2, c1, c2)
        assert k >= 0
        assert k == pytest.approx(sim.kullback_semidistance(b2, s2, b1, s1, c2, c1), rel=1e-12)

    @given(st.lists(st.floats(0, 10), min_size=2, max_size=10))
    def test_monotone_in_distance(self, scales):
        direction = np.array([1.0, -2.0, 0.5])
        values = [sim.kullback_semidistance(np.zeros(3), 1, t * direction, 1, np.eye(3), np.eye(3))
                  for t in sorted(scales)]
        assert np.all(np.diff(values) >= -1e-12)


class TestExperiment:
    def test_method_names(self):
        cfg = sim.method_config("perm-lasso", 0.05, 100)
        assert (cfg.collection, cfg.calibration, cfg.statistic) == (LASSO, cal.PERMUTATION, cal.CLR)
        cfg = sim.method_config("fisher-bonf-s1", 0.05, 100)
        assert (cfg.collection, cfg.calibration, cfg.statistic) == (S1, cal.BONFERRONI, cal.FISHER)
        cfg = sim.method_config("perm-sleq2", 0.05, 100)
        assert (cfg.collection, cfg.k) == (SLEQK, 2)
        for bad in ("perm", "xx-lasso", "perm-ridge"):
            with pytest.raises(ValueError):
                sim.method_config(bad, 0.05, 100)

    def test_grid(self):
        cells = sim.grid(["H00", "3"], [sim.CovarianceSpec()], [25, 50], [40], [0.1, 0.2])
        assert len(cells) == 2 * 1 + 2 * 2
        assert all(c.r == 0 for c in cells if c.scenario == "H00")
        assert sim.run_experiment([], ["perm-lasso"], 10) == []

    def test_ci(self):
        assert sim.ci_half_width(0.5, 100) == pytest.approx(0.098)
        assert sim.ci_half_width(0.0, 100) == 0.0

    def test_rows_deterministic_and_shared_data(self):
        cells = sim.grid(["3"], [sim.CovarianceSpec(sim.POWER_DECAY)], [20], [15], [0.4])
        a = sim.run_experiment(cells, ["perm-lasso", "bonf-s1"], 6, b=20, seed=3)
        b = sim.run_experiment(cells, ["perm-lasso", "bonf-s1"], 6, b=20, seed=3)
        assert sim.rows_to_csv(a) == sim.rows_to_csv(b)
        assert [r.method for r in a] == ["perm-lasso", "bonf-s1"]
        assert all(r.mean_runtime_ms is None for r in a)
        d1 = sim.replicate_data(cells[0], 3, 0, 2)
        d2 = sim.replicate_data(cells[0], 3, 0, 2)
        assert_array_equal(d1.x2, d2.x2)

    def test_csv_schema(self):
        cells = sim.grid(["H00"], [sim.CovarianceSpec()], [12], [6], [0.0])
        rows = sim.run_experiment(cells, ["bonf-s1"], 4, timing=True)
        parsed = list(csv.reader(io.StringIO(sim.rows_to_csv(rows))))
        assert tuple(parsed[0]) == sim.CSV_COLUMNS
        assert parsed[1][:7] == ["H00", "identity", "12", "6", "0", "bonf-s1", "4"]
        assert float(parsed[1][-1]) > 0

    def test_level_table(self):
        rows = [
            sim.ResultRow("H00", "identity", n, 50, 0.0, m, 100, rate, sim.ci_half_width(rate, 100))
            for n in (25, 50)
            for m, rate in (("bonf-lasso", 0.0), ("perm-lasso", 0.05))
        ]
        lines = sim.level_table(rows).splitlines()
        assert len(lines) == 3
        assert "perm-lasso" in lines[0]
        assert "5.0 ± 4.3" in lines[1]

    def test_replicate_seeds_distinct(self):
        seeds = {sim.replicate_test_seed(0, c, r) for c in range(3) for r in range(50)}
        assert len(seeds) == 150
