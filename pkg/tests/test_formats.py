"""
Tests for dataset, weight, model and report files.
"""

import json

import numpy as np
import pytest

from interval_sar.errors import FormatError, HashMismatch, InvalidInterval
from interval_sar.estimators import RhoGrid, fit_icsm
from interval_sar.formats import (check_model_hash, data_hash, read_dataset,
                                  read_model, read_weights, write_model,
                                  write_report, write_weights)
from interval_sar.intervals import IntervalSample
from interval_sar.simulation import ExperimentReport, LatticeSpec, RepRecord, ScenarioConfig
from interval_sar.weights import WeightMatrix, block, rook

DATASET = """id,x_lower,x_upper,y_lower,y_upper,lon,lat,split
a,1,3,0,2,100.5,30,train
b,2,6,1,5,101,30.5,train
c,0,2,,,101.5,31,test
"""


@pytest.fixture
def dataset_file(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text(DATASET)
    return path


class TestWeightsFile:
    """Tests for triplet weight files."""

    def test_block_triplets(self, tmp_path):
        """Test the exact text of a two-unit block matrix."""
        path = tmp_path / "w.csv"
        write_weights(block(1, 2), path)
        assert path.read_text() == "# n=2 normalized=1\ni,j,w\n0,1,1\n1,0,1\n"

    def test_read_back(self, tmp_path):
        """Test that a written rook matrix reads back identically."""
        path = tmp_path / "w.csv"
        w = rook(3, 4)
        write_weights(w, path)
        back = read_weights(path)
        assert back.n == 12
        assert not back.row_normalized
        assert back.triplets() == w.triplets()

    def test_empty_matrix(self, tmp_path):
        """Test that a matrix without links keeps its size."""
        path = tmp_path / "w.csv"
        write_weights(WeightMatrix(np.zeros((3, 3))), path)
        assert read_weights(path).n == 3

    @pytest.mark.parametrize(
        "text",
        [
            "i,j,w\n0,1,1\n",
            "# n=2 normalized=0\na,b,c\n0,1,1\n",
            "# n=2 normalized=0\ni,j,w\n0,2,1\n",
            "# n=2 normalized=0\ni,j,w\n0,1,1\n0,1,2\n",
            "# n=2 normalized=0\ni,j,w\n0,x,1\n",
        ],
    )
    def test_malformed(self, tmp_path, text):
        """Test that bad headers, columns, indices and duplicates are rejected."""
        path = tmp_path / "w.csv"
        path.write_text(text)
        with pytest.raises(FormatError):
            read_weights(path)

    def test_missing_file(self, tmp_path):
        """Test that a missing file is a FormatError."""
        with pytest.raises(FormatError):
            read_weights(tmp_path / "absent.csv")


class TestDatasetFile:
    """Tests for dataset CSV files."""

    def test_read(self, dataset_file):
        """Test ids, coordinates, split labels and missing responses."""
        dataset = read_dataset(dataset_file)
        assert dataset.ids == ("a", "b", "c")
        assert dataset.split == ("train", "train", "test")
        assert dataset.coords[1].longitude == 101.0
        assert dataset.has_response([0, 1])
        assert not dataset.has_response()

    def test_sample_of_training_rows(self, dataset_file):
        """Test that training rows form an interval sample."""
        sample = read_dataset(dataset_file).sample([0, 1])
        np.testing.assert_array_equal(sample.yc, [1.0, 3.0])
        np.testing.assert_array_equal(sample.xr, [1.0, 2.0])

    def test_sample_needs_responses(self, dataset_file):
        """Test that rows without responses cannot be sampled."""
        with pytest.raises(FormatError):
            read_dataset(dataset_file).sample()

    def test_design_covers_all_rows(self, dataset_file):
        """Test that covariates are available on every row."""
        X = read_dataset(dataset_file).design_matrix()
        np.testing.assert_array_equal(X[2], [1.0, 1.0, 1.0])

    def test_missing_column(self, tmp_path):
        """Test that required columns are enforced."""
        path = tmp_path / "d.csv"
        path.write_text("id,x_lower,x_upper,y_lower\na,0,1,0\n")
        with pytest.raises(FormatError):
            read_dataset(path)

    def test_duplicate_ids(self, tmp_path):
        """Test that ids must be unique."""
        path = tmp_path / "d.csv"
        path.write_text("id,x_lower,x_upper,y_lower,y_upper\na,0,1,0,1\na,0,1,0,1\n")
        with pytest.raises(FormatError):
            read_dataset(path)

    def test_reversed_bounds(self, tmp_path):
        """Test that lower > upper is reported as an invalid interval."""
        path = tmp_path / "d.csv"
        path.write_text("id,x_lower,x_upper,y_lower,y_upper\na,0,1,3,1\n")
        with pytest.raises(InvalidInterval):
            read_dataset(path)

    def test_half_missing_response(self, tmp_path):
        """Test that a row with only one response bound is rejected."""
        path = tmp_path / "d.csv"
        path.write_text("id,x_lower,x_upper,y_lower,y_upper\na,0,1,0,\n")
        with pytest.raises(FormatError):
            read_dataset(path)


class TestModelFile:
    """Tests for model JSON files and the training data hash."""

    @pytest.fixture
    def fitted(self):
        rng = np.random.default_rng(0)
        w = block(4, 3)
        n = w.n
        xc, xr = rng.uniform(0, 5, n), rng.uniform(0.5, 1.5, n)
        sample = IntervalSample.from_center_range(1 + xc + rng.normal(size=n), 1 + xr, xc, xr)
        return sample, w, fit_icsm(sample, w, RhoGrid(-0.5, 0.5, 0.25))

    def test_round_trip(self, tmp_path, fitted):
        """Test that a model file restores the fit and its data hash."""
        sample, w, result = fitted
        path = tmp_path / "model.json"
        write_model(result, path, data_hash(sample, w))
        back, digest = read_model(path)
        assert back.to_dict() == result.to_dict()
        assert digest == data_hash(sample, w)
        check_model_hash(digest, sample, w)

    def test_header_fields(self, tmp_path, fitted):
        """Test the format marker and version."""
        sample, w, result = fitted
        path = tmp_path / "model.json"
        write_model(result, path, "abc")
        payload = json.loads(path.read_text())
        assert payload["format"] == "interval-sar-model"
        assert payload["version"] == 1
        assert len(payload["fit"]["grid_profile"]) == 5

    def test_hash_mismatch(self, fitted):
        """Test that changed training data is detected."""
        sample, w, _ = fitted
        digest = data_hash(sample, w)
        changed = sample.subset(range(sample.n - 1))
        with pytest.raises(HashMismatch):
            check_model_hash(digest, changed, w.submatrix(range(sample.n - 1)))
        with pytest.raises(HashMismatch):
            check_model_hash(digest, sample, None)

    def test_not_a_model(self, tmp_path):
        """Test that other JSON files are rejected."""
        path = tmp_path / "model.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(FormatError):
            read_model(path)

    def test_invalid_json(self, tmp_path):
        """Test that unparsable files are rejected."""
        path = tmp_path / "model.json"
        path.write_text("{not json")
        with pytest.raises(FormatError):
            read_model(path)


class TestReportFiles:
    """Tests for scenario report output."""

    def test_files_written(self, tmp_path):
        """Test that summary, text and per-rep files are created."""
        config = ScenarioConfig(lattice=LatticeSpec("block", 5, 4), rho_true=0.4, name="demo")
        metrics = {m: {k: 1.0 for k in ("rmse_l", "rmse_u", "mse_l", "mse_u", "ar", "n_d", "mse_c", "rho_hat")}
                   for m in ("ICSM", "ICM", "ISM")}
        report = ExperimentReport(config=config, records=(RepRecord(rep=0, metrics=metrics),))
        paths = write_report(report, tmp_path / "out")
        assert sorted(p.name for p in paths.values()) == ["demo.csv", "demo.txt", "demo_reps.csv"]
        summary = paths["summary"].read_text()
        assert summary.startswith("scenario,model,metric,mean,sd,n_reps,n_failed\n")
        assert "\r" not in summary
