"""
Tests for the Monte-Carlo data generator, replication runner and reports.
"""

import os

import numpy as np
import pandas as pd
import pytest

from interval_sar.errors import FormatError, TooManyRejections
from interval_sar.estimators import RhoGrid, fit_icm, fit_icsm, fitted_intervals
from interval_sar.predictor import SamplePartition
from interval_sar.simulation import (METRICS, CoefficientSpec, Distribution,
                                     ExperimentReport, LatticeSpec, RepRecord,
                                     ScenarioConfig, generate,
                                     make_geo_dataset, paper_scenario_matrix,
                                     run_replication, run_scenario)


def small_config(**overrides):
    kwargs = dict(
        lattice=LatticeSpec("block", 5, 4),
        rho_true=0.4,
        n_reps=4,
        seed=123,
        grid=RhoGrid(-1.0, 1.0, 0.1),
    )
    kwargs.update(overrides)
    return ScenarioConfig(**kwargs)


def fake_record(rep, value):
    metrics = {model: {name: float(value) for name in METRICS} for model in ("ICSM", "ICM", "ISM")}
    return RepRecord(rep=rep, metrics=metrics)


class TestScenarioMatrix:
    """Tests for the standard scenario set."""

    def test_count(self):
        """Test that the matrix has 36 scenarios."""
        assert len(paper_scenario_matrix()) == 36

    def test_first_scenario(self):
        """Test the layout and defaults of the first scenario."""
        first = paper_scenario_matrix(base_seed=7)[0]
        assert first.lattice.n == 120
        assert first.lattice.kind == "rook"
        assert first.rho_true == 0.0
        assert first.noise_c == Distribution.normal(0.0, 11.0)
        assert first.seed == 7

    def test_block_members(self):
        """Test that every block scenario has at least six members per district."""
        blocks = [s for s in paper_scenario_matrix() if s.lattice.kind == "block"]
        assert len(blocks) == 18
        assert all(s.lattice.b >= 6 for s in blocks)

    def test_distinct_names_and_seeds(self):
        """Test that scenarios have unique names and consecutive seeds."""
        scenarios = paper_scenario_matrix(base_seed=100, n_reps=5)
        assert len({s.name for s in scenarios}) == 36
        assert [s.seed for s in scenarios] == list(range(100, 136))
        assert all(s.n_reps == 5 for s in scenarios)


class TestScenarioConfig:
    """Tests for scenario configuration."""

    def test_default_name(self):
        """Test the generated scenario label."""
        config = ScenarioConfig(lattice=LatticeSpec("block", 20, 6), rho_true=0.4)
        assert config.name == "block_20x6_rho0.4_N(0,11)"

    def test_from_dict_defaults(self):
        """Test that a minimal JSON object takes default distributions."""
        config = ScenarioConfig.from_dict({"lattice": {"kind": "rook", "size": [10, 12]}, "rho_true": 0.0})
        assert config.lattice.n == 120
        assert config.noise_r == Distribution.normal(0.0, 5.0)
        assert config.x_c_dist == Distribution.uniform(0.0, 150.0)
        assert config.n_reps == 75

    def test_from_dict_numbers_are_constants(self):
        """Test that plain numbers in JSON become constant distributions."""
        config = ScenarioConfig.from_dict(
            {"lattice": {"kind": "block", "size": [5, 4]}, "rho_true": 0.2, "noise_c": 0, "beta": {"c1": -2}}
        )
        assert config.noise_c == Distribution.constant(0.0)
        assert config.beta.c1 == Distribution.constant(-2.0)
        assert config.beta.r2 == CoefficientSpec().r2

    def test_dict_round_trip(self):
        """Test that to_dict output rebuilds an equal scenario."""
        config = small_config(noise_c=Distribution.normal(0.0, 18.0))
        assert ScenarioConfig.from_dict(config.to_dict()) == config

    @pytest.mark.parametrize(
        "data",
        [
            {"rho_true": 0.4},
            {"lattice": {"kind": "hex", "size": [2, 2]}, "rho_true": 0.4},
            {"lattice": {"kind": "block", "size": [2]}, "rho_true": 0.4},
            {"lattice": {"kind": "block", "size": [5, 4]}, "rho_true": "high"},
            {"lattice": {"kind": "block", "size": [5, 4]}, "rho_true": 0.4, "noise_c": {"kind": "cauchy"}},
            {"lattice": {"kind": "block", "size": [5, 4]}, "rho_true": 0.4, "n_reps": 0},
            [1, 2],
        ],
    )
    def test_malformed(self, data):
        """Test that malformed scenario objects raise FormatError."""
        with pytest.raises(FormatError):
            ScenarioConfig.from_dict(data)

    def test_with_overrides(self):
        """Test that overrides replace only the given fields."""
        config = small_config()
        changed = config.with_overrides(n_reps=9)
        assert changed.n_reps == 9
        assert changed.seed == config.seed
        assert changed.name == config.name

    def test_rook_lattice_row_normalized(self):
        """Test that rook weights are row-normalized for simulation."""
        w = LatticeSpec("rook", 3, 3).build()
        assert w.row_normalized
        np.testing.assert_allclose(np.asarray(w.matrix.sum(axis=1)).ravel(), 1.0)


class TestGenerate:
    """Tests for the data generator."""

    def test_deterministic(self):
        """Test that the same seed and rep give identical data."""
        first = generate(small_config(), 3)
        second = generate(small_config(), 3)
        np.testing.assert_array_equal(first.sample.yc, second.sample.yc)
        np.testing.assert_array_equal(first.sample.yr, second.sample.yr)
        np.testing.assert_array_equal(first.beta_c, second.beta_c)

    def test_reps_differ(self):
        """Test that different reps draw different data."""
        config = small_config()
        assert not np.array_equal(generate(config, 0).sample.yc, generate(config, 1).sample.yc)

    def test_radii_positive(self):
        """Test that every accepted draw has positive response radii."""
        config = small_config(noise_r=Distribution.normal(0.0, 400.0))
        for rep in range(5):
            assert np.all(generate(config, rep).sample.yr > 0)

    def test_coefficient_ranges(self):
        """Test that coefficients follow the default distributions."""
        data = generate(small_config(), 0)
        assert data.beta_c[0] == 0.0
        assert -2.5 <= data.beta_c[1] <= -2.0
        assert data.beta_c[2] == 1.0
        assert data.beta_r[1] == 0.1
        assert 2.5 <= data.beta_r[2] <= 5.0

    def test_zero_rho_is_linear(self):
        """Test that rho = 0 without noise gives the linear trend."""
        config = small_config(rho_true=0.0, noise_c=Distribution.constant(0.0))
        data = generate(config, 0)
        X = data.sample.design_matrix()
        np.testing.assert_allclose(data.sample.yc, X @ data.beta_c, rtol=1e-12, atol=1e-9)

    def test_too_many_rejections(self):
        """Test that radius noise that is always too negative gives up."""
        config = small_config(noise_r=Distribution.constant(-1e6))
        with pytest.raises(TooManyRejections):
            generate(config, 0)

    def test_rejection_is_recorded_as_failed_rep(self):
        """Test that a generator failure marks the replication failed."""
        config = small_config(noise_r=Distribution.constant(-1e6))
        record = run_replication(config, 0)
        assert record.failed
        assert record.error.startswith("TooManyRejections")


class TestReport:
    """Tests for replication aggregation."""

    def test_mean_and_sd(self):
        """Test that aggregates equal numpy mean and ddof=1 sd of per-rep values."""
        report = run_scenario(small_config())
        for model in ("ICSM", "ICM", "ISM"):
            values = report.values(model, "ar")
            assert values.size == 4
            assert report.mean(model, "ar") == float(np.mean(values))
            assert report.sd(model, "ar") == float(np.std(values, ddof=1))

    def test_icm_rho_is_zero(self):
        """Test that ICM always reports rho_hat = 0."""
        report = run_scenario(small_config(n_reps=2))
        assert np.all(report.values("ICM", "rho_hat") == 0.0)

    def test_mse_is_squared_rmse(self):
        """Test that mse_l and mse_u square the bound RMSEs."""
        report = run_scenario(small_config(n_reps=2))
        np.testing.assert_allclose(report.values("ICSM", "mse_l"), report.values("ICSM", "rmse_l") ** 2)
        np.testing.assert_allclose(report.values("ISM", "mse_u"), report.values("ISM", "rmse_u") ** 2)

    def test_failed_reps_excluded(self):
        """Test that failed replications are counted but not averaged."""
        records = (fake_record(0, 1.0), RepRecord(rep=1, error="SingularA: boom"), fake_record(2, 3.0))
        report = ExperimentReport(config=small_config(), records=records)
        assert report.n_failed == 1
        assert report.mean("ICSM", "rmse_l") == 2.0
        summary = report.summary_frame()
        assert set(summary["n_reps"]) == {2}
        assert set(summary["n_failed"]) == {1}
        raw = report.raw_frame()
        assert (raw["error"] == "SingularA: boom").sum() == 1

    def test_summary_layout(self):
        """Test one summary row per model and metric."""
        report = ExperimentReport(config=small_config(), records=(fake_record(0, 1.0),))
        summary = report.summary_frame()
        assert len(summary) == 3 * len(METRICS)
        assert list(summary.columns) == ["scenario", "model", "metric", "mean", "sd", "n_reps", "n_failed"]
        assert summary["sd"].isna().all()

    def test_to_text_mentions_scenario(self):
        """Test the plain-text table header."""
        report = ExperimentReport(config=small_config(), records=(fake_record(0, 1.0), fake_record(1, 1.0)))
        text = report.to_text()
        assert small_config().name in text
        assert "2 retained, 0 failed" in text

    def test_worker_count_does_not_change_results(self):
        """Test that parallel replications reproduce the sequential report."""
        config = small_config(n_reps=3)
        serial = run_scenario(config, jobs=1)
        parallel = run_scenario(config, jobs=2)
        pd.testing.assert_frame_equal(serial.summary_frame(), parallel.summary_frame())
        pd.testing.assert_frame_equal(serial.raw_frame(), parallel.raw_frame())


class TestGeoDataset:
    """Tests for the synthetic station dataset."""

    def test_frame_layout(self):
        """Test columns, ids and split sizes."""
        geo = make_geo_dataset(n_units=30, seed=5)
        frame = geo.to_frame()
        assert list(frame.columns) == ["id", "x_lower", "x_upper", "y_lower", "y_upper", "lon", "lat", "split"]
        assert frame["id"].iloc[0] == "S00"
        assert (frame["split"] == "test").sum() == 3
        assert frame["lon"].between(100, 120).all()
        assert (frame["y_upper"] >= frame["y_lower"]).all()

    def test_deterministic(self):
        """Test that a seed fixes the dataset."""
        pd.testing.assert_frame_equal(make_geo_dataset(20, seed=1).to_frame(), make_geo_dataset(20, seed=1).to_frame())

    def test_weights_row_normalized(self):
        """Test that the generating weights are row-normalized."""
        geo = make_geo_dataset(n_units=20, seed=2)
        assert geo.w.row_normalized
        assert geo.w.n == 20


def trend_report(config):
    return run_scenario(config, jobs=os.cpu_count() or 1)


class TestStrongLagTrend:
    """A small strong-lag study on block 20x6 that runs with the default test selection."""

    @pytest.fixture(scope="class")
    def report(self):
        config = ScenarioConfig(
            lattice=LatticeSpec("block", 20, 6), rho_true=0.8, n_reps=10, seed=2024, grid=RhoGrid(-1.0, 1.0, 0.05)
        )
        return trend_report(config)

    def test_no_failed_reps(self, report):
        """Test that every replication fits all three models."""
        assert report.n_failed == 0

    def test_icsm_accuracy(self, report):
        """Test that ICSM keeps a high accuracy rate and tracks ISM."""
        assert report.mean("ICSM", "ar") >= 0.6
        assert report.mean("ICSM", "ar") >= report.mean("ISM", "ar") - 0.1

    def test_icm_degrades(self, report):
        """Test that ignoring the lag costs ICM at least 5x the lower-bound error."""
        assert report.mean("ICM", "mse_l") >= 5 * report.mean("ICSM", "mse_l")
        assert report.mean("ICM", "ar") <= 0.35

    def test_lag_detected(self, report):
        """Test that the selected rho is clearly positive."""
        assert report.mean("ICSM", "rho_hat") >= 0.5


@pytest.mark.slow
class TestStudyTrends:
    """Reduced reruns of the simulation study; each takes minutes."""

    def test_no_spatial_lag(self):
        """Test that ICSM matches ICM when the true rho is 0."""
        config = ScenarioConfig(lattice=LatticeSpec("rook", 10, 12), rho_true=0.0, n_reps=30)
        report = trend_report(config)
        icsm, icm = report.mean("ICSM", "mse_l"), report.mean("ICM", "mse_l")
        assert abs(icsm - icm) / icm <= 0.05
        assert abs(report.mean("ICSM", "rho_hat")) <= 0.1

    def test_strong_spatial_lag(self):
        """Test that ICM degrades badly when rho is 0.8."""
        config = ScenarioConfig(lattice=LatticeSpec("block", 20, 6), rho_true=0.8, n_reps=30)
        report = trend_report(config)
        assert report.mean("ICM", "mse_l") >= 5 * report.mean("ICSM", "mse_l")
        assert report.mean("ICSM", "ar") >= 0.6
        assert report.mean("ICM", "ar") <= 0.35

    def test_moderate_spatial_lag(self):
        """Test that the spatial models agree and beat ICM at rho 0.4."""
        config = ScenarioConfig(lattice=LatticeSpec("block", 20, 12), rho_true=0.4, n_reps=30)
        report = trend_report(config)
        icsm, ism, icm = (report.mean(m, "ar") for m in ("ICSM", "ISM", "ICM"))
        assert abs(icsm - ism) <= 0.02
        assert icsm - icm >= 0.08
        assert ism - icm >= 0.08

    @pytest.mark.parametrize(
        "lattice,rho", [(LatticeSpec("rook", 10, 12), 0.0), (LatticeSpec("block", 20, 6), 0.8)]
    )
    def test_constrained_fits_feasible(self, lattice, rho):
        """Test that constrained training fits overlap every observation."""
        config = ScenarioConfig(lattice=lattice, rho_true=rho, n_reps=5)
        for rep in range(config.n_reps):
            data = generate(config, rep)
            part = SamplePartition.random(data.sample.n, 0.9, np.random.default_rng(rep), data.w)
            train = data.sample.subset(part.train_idx)
            hold_out = part.hold_out(data.sample.design_matrix())
            for result in (fit_icsm(train, data.w, hold_out=hold_out), fit_icm(train)):
                fitted = fitted_intervals(result, train, data.w, hold_out=hold_out)
                assert np.all(fitted.radii >= -1e-8)
                overlap = np.minimum(train.yc + train.yr, fitted.upper) - np.maximum(train.yc - train.yr, fitted.lower)
                assert np.all(overlap >= -1e-6)
