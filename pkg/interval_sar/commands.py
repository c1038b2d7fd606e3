"""
Subcommand handlers for the interval-sar CLI.

Each handler takes the parsed arguments, prints its machine-readable result
as JSON to stdout and returns an exit code. Library errors propagate to
cli.main, which turns them into a single stderr line.
"""

import json
import logging
from pathlib import Path

import numpy as np

from . import __version__, formats
from .config import get_default_jobs, get_default_seed
from .errors import DimensionMismatch, FormatError
from .estimators import RhoGrid, fit
from .models import ModelKind, PredictionMethod
from .predictor import SamplePartition, evaluate, predict_from_covariates
from .simulation import ScenarioConfig, make_geo_dataset, paper_scenario_matrix, run_scenario
from .weights import (block, candidate_thresholds, distance_matrix, inverse_distance,
                      moran_scatter, morans_i_test, rook, row_normalize, select_k_d0)

logger = logging.getLogger(__name__)


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2))


def _seed(args) -> int:
    return get_default_seed() if args.seed is None else args.seed


def _jobs(args) -> int:
    return get_default_jobs() if getattr(args, "jobs", None) is None else max(1, args.jobs)


def _partition(dataset: formats.Dataset, w=None) -> SamplePartition:
    """Split by the dataset's split column; without one every row trains."""
    if dataset.split is None:
        return SamplePartition(np.arange(dataset.n), np.array([], dtype=int), w)
    return SamplePartition.from_labels(dataset.split, w)


def handle_weights(args) -> int:
    """
    Build a weight matrix and write it in triplet format.

    Output format:
    {
      "kind": "rook",
      "n": 120,
      "nnz": 436,
      "normalized": true,
      "output": "w.csv"
    }
    """
    extra = {}
    if args.kind == "rook":
        w = rook(args.rows, args.cols)
    elif args.kind == "block":
        w = block(args.districts, args.members)
    elif args.kind == "invdist":
        _, coords = formats.read_coordinates(args.coords)
        w = inverse_distance(coords, args.k, args.d0)
    else:
        dataset = formats.read_dataset(args.data)
        if args.coords:
            _, coords = formats.read_coordinates(args.coords)
        elif dataset.coords is not None:
            coords = dataset.coords
        else:
            raise FormatError("weight selection needs --coords or lon,lat columns in the dataset")
        if len(coords) != dataset.n:
            raise DimensionMismatch(f"{len(coords)} coordinates for {dataset.n} dataset rows")
        z = _column_values(args.data, dataset, args.column)
        dist = distance_matrix(coords)
        selection = select_k_d0(coords, z, args.k_max, dist=dist)
        w = inverse_distance(coords, selection.k, selection.d0)
        extra = {
            "k": selection.k,
            "d0": selection.d0,
            "moran": selection.moran,
            "candidates": {k: int(candidate_thresholds(dist, k).size) for k in range(1, args.k_max + 1)},
            "per_k": [{"k": k, "d0": d0, "moran": stat} for k, d0, stat in selection.per_k],
        }
        args.normalize = True

    if args.normalize and not w.row_normalized:
        w = row_normalize(w)
    formats.write_weights(w, args.output)
    _emit(
        {
            "kind": args.kind,
            "n": w.n,
            "nnz": int(w.matrix.nnz),
            "normalized": w.row_normalized,
            **extra,
            "output": str(args.output),
        }
    )
    return 0


def _column_values(path, dataset: formats.Dataset, column: str) -> np.ndarray:
    if column in ("yc", "yr"):
        sample = dataset.sample()
        return np.asarray(sample.yc if column == "yc" else sample.yr)
    frame = formats.read_table(path)
    if column not in frame.columns:
        raise FormatError(f"column '{column}' not found in {path}")
    try:
        return frame[column].astype(float).to_numpy()
    except ValueError as e:
        raise FormatError(f"column '{column}' is not numeric: {e}") from e


def handle_moran(args) -> int:
    """
    Moran's I of a dataset column, or of a fitted model's center residuals.

    Output format:
    {
      "column": "yc",
      "statistic": 0.41,
      "p_value": 0.001,
      "n_permutations": 999,
      ...
    }
    """
    dataset = formats.read_dataset(args.data)
    w = formats.read_weights(args.weights)
    ids = dataset.ids
    if args.column == "residual":
        if not args.model_file:
            raise FormatError("--column residual needs --model")
        fitted, _ = formats.read_model(args.model_file)
        z = fitted.residuals_c
        if w.n != z.size:
            part = _partition(dataset, w if w.n == dataset.n else None)
            if part.train_idx.size != z.size or part.w_full is None:
                raise DimensionMismatch(f"{z.size} residuals do not match weights of size {w.n}")
            w = part.training_weights()
            ids = tuple(dataset.ids[i] for i in part.train_idx)
    else:
        z = _column_values(args.data, dataset, args.column)
    if w.n != len(z):
        raise DimensionMismatch(f"weights are {w.n} x {w.n} but the column has {len(z)} values")

    result = morans_i_test(
        w, z, n_perm=args.n_perm, seed=_seed(args), alternative=args.alternative, jobs=_jobs(args)
    )
    if args.scatter_out:
        centered, lagged = moran_scatter(w, z)
        formats.write_scatter(ids, centered, lagged, args.scatter_out)
    _emit({"column": args.column, **result.to_dict(), "seed": _seed(args)})
    return 0


def _fit_inputs(args, dataset: formats.Dataset, kind: ModelKind):
    w_full = None
    if args.weights:
        w_full = formats.read_weights(args.weights)
        if w_full.n != dataset.n:
            raise DimensionMismatch(f"weights are {w_full.n} x {w_full.n} but the dataset has {dataset.n} rows")
    elif kind is not ModelKind.ICM:
        raise FormatError(f"--weights is required for {kind.value.lower()}")
    part = _partition(dataset, w_full)
    if kind is ModelKind.ICM:
        return part, None, None
    return part, w_full, part.hold_out(dataset.design_matrix())


def handle_fit(args) -> int:
    """
    Fit a model on the training rows and write the model file.

    Output format:
    {
      "model": "ICSM",
      "rho": 0.56,
      "beta_c": [...],
      "beta_r": [...],
      "sigma2_c": 0.58,
      ...
      "n_train": 90,
      "output": "model.json"
    }
    """
    kind = ModelKind(args.model.upper())
    dataset = formats.read_dataset(args.data)
    part, w_full, hold_out = _fit_inputs(args, dataset, kind)
    train = dataset.sample(part.train_idx)
    grid = RhoGrid(start=args.rho_min, stop=args.rho_max, step=args.rho_step)
    result = fit(kind, train, w_full, grid=grid, jobs=_jobs(args), hold_out=hold_out)
    formats.write_model(result, args.output, formats.data_hash(train, w_full, hold_out))
    _emit({**result.summary(), "n_train": train.n, "output": str(args.output)})
    return 0


def handle_predict(args) -> int:
    """
    Predict the test rows of a dataset with a saved model.

    Output format:
    {
      "method": "BP",
      "n_test": 10,
      "n_clamped": 0,
      "metrics": {"rmse_l": ..., "rmse_u": ..., "ar": ..., "n_d": ..., "mse_c": ...},
      "output": "pred.csv"
    }
    """
    fitted, expected_hash = formats.read_model(args.model_file)
    dataset = formats.read_dataset(args.data)
    if dataset.split is None:
        raise FormatError("prediction needs a split column marking train and test rows")
    part, w_full, hold_out = _fit_inputs(args, dataset, fitted.model)
    train = dataset.sample(part.train_idx)
    if args.force:
        if formats.data_hash(train, w_full, hold_out) != expected_hash:
            logger.warning("model hash does not match the training data; continuing (--force)")
    else:
        formats.check_model_hash(expected_hash, train, w_full, hold_out)

    method = PredictionMethod(args.method.upper())
    pred = predict_from_covariates(fitted, part, dataset.design_matrix(), train.yc, method)
    formats.write_predictions(dataset.ids, pred, args.output)

    payload = {
        "model": fitted.model.value,
        "method": method.value,
        "n_test": int(part.test_idx.size),
        "n_clamped": int(np.count_nonzero(pred.clamped)),
    }
    if part.test_idx.size and dataset.has_response(part.test_idx):
        payload["metrics"] = evaluate(pred, dataset.truth(part.test_idx)).to_dict()
    payload["output"] = str(args.output)
    _emit(payload)
    return 0


def _load_scenarios(args):
    if args.paper_matrix:
        return paper_scenario_matrix(base_seed=_seed(args))
    data = formats.read_json(args.scenario)
    items = data if isinstance(data, list) else [data]
    scenarios = []
    for item in items:
        if isinstance(item, dict) and "seed" not in item:
            item = {**item, "seed": _seed(args)}
        scenario = ScenarioConfig.from_dict(item)
        if args.seed is not None:
            scenario = scenario.with_overrides(seed=args.seed)
        scenarios.append(scenario)
    return scenarios


def handle_simulate(args) -> int:
    """
    Run simulation scenarios and write their reports.

    Output format:
    {
      "scenarios": [
        {"name": "rook_10x12_rho0_N(0,11)", "n_reps": 75, "n_failed": 0,
         "files": {"summary": "...", "text": "...", "reps": "..."}},
        ...
      ],
      "total": 1
    }
    """
    output = {}
    if args.write_geo_dataset:
        geo = make_geo_dataset(n_units=args.geo_units, seed=_seed(args))
        formats.write_dataset_frame(geo.to_frame(), args.write_geo_dataset)
        output["geo_dataset"] = {"path": str(args.write_geo_dataset), "n": geo.sample.n, "rho": geo.rho}
        if args.write_geo_coords:
            formats.write_coordinates(geo.ids, geo.coords, args.write_geo_coords)
            output["geo_dataset"]["coords"] = str(args.write_geo_coords)

    if args.scenario or args.paper_matrix:
        if args.output is None:
            raise FormatError("simulate needs -o/--output directory for reports")
        scenarios = _load_scenarios(args)
        grid = None if args.rho_step is None else RhoGrid(step=args.rho_step)
        if args.reps is not None or grid is not None:
            scenarios = [s.with_overrides(n_reps=args.reps, grid=grid) for s in scenarios]
        jobs = _jobs(args)
        results = []
        for scenario in scenarios:
            report = run_scenario(scenario, jobs=jobs)
            paths = formats.write_report(report, Path(args.output))
            results.append(
                {
                    "name": scenario.name,
                    "n_reps": scenario.n_reps,
                    "n_failed": report.n_failed,
                    "files": {key: str(path) for key, path in paths.items()},
                }
            )
        output["scenarios"] = results
        output["total"] = len(results)
    elif not args.write_geo_dataset:
        raise FormatError("simulate needs a scenario file, --paper-matrix or --write-geo-dataset")
    _emit(output)
    return 0


def handle_version(args) -> int:
    _emit({"name": "interval-sar", "version": __version__})
    return 0
