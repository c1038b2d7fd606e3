"""
File formats for datasets, weights, fitted models and reports.

- Weights: CSV triplets `i,j,w` (0-based) after a `# n=<n> normalized=<0|1>` line
- Coordinates: CSV `id,lon,lat`
- Datasets: CSV `id,x_lower,x_upper,y_lower,y_upper` with optional `lon,lat,split`
- Models: JSON holding a FitResult and a hash of the data it was fitted on

Floats are written with 17 significant digits so every file round-trips
at full double precision.
"""

import hashlib
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from .errors import FormatError, HashMismatch
from .estimators import HoldOut
from .intervals import Interval, IntervalSample, bounds_array
from .models import FitResult, PredictionResult
from .weights import GeoPoint, WeightMatrix

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
MODEL_FORMAT = "interval-sar-model"
MODEL_FORMAT_VERSION = 1

_WEIGHTS_HEADER = re.compile(r"^#\s*n=(\d+)\s+normalized=([01])\s*$")
DATASET_COLUMNS = ("id", "x_lower", "x_upper", "y_lower", "y_upper")


def _write_csv(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_table(path, **kwargs) -> pd.DataFrame:
    try:
        return pd.read_csv(path, **kwargs)
    except FileNotFoundError as e:
        raise FormatError(f"file not found: {path}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise FormatError(f"cannot parse {path}: {e}") from e


# --- weights -----------------------------------------------------------------


def write_weights(w: WeightMatrix, path) -> None:
    coo = w.matrix.tocoo()
    frame = pd.DataFrame({"i": coo.row.astype(int), "j": coo.col.astype(int), "w": coo.data})
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# n={w.n} normalized={int(w.row_normalized)}\n")
        _write_csv(frame, fh)


def read_weights(path) -> WeightMatrix:
    """
    Read a triplet weight file.

    Raises:
        FormatError: On a missing header, bad columns or out-of-range indices
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline()
            match = _WEIGHTS_HEADER.match(first.strip())
            if not match:
                raise FormatError(f"{path}: first line must be '# n=<n> normalized=<0|1>'")
            frame = read_table(fh, dtype={"i": "int64", "j": "int64", "w": "float64"})
    except FileNotFoundError as e:
        raise FormatError(f"file not found: {path}") from e
    except ValueError as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"{path}: {e}") from e
    n, normalized = int(match.group(1)), match.group(2) == "1"
    if list(frame.columns) != ["i", "j", "w"]:
        raise FormatError(f"{path}: expected columns i,j,w, got {','.join(frame.columns)}")
    i, j = frame["i"].to_numpy(), frame["j"].to_numpy()
    if frame.size and (i.min() < 0 or j.min() < 0 or i.max() >= n or j.max() >= n):
        raise FormatError(f"{path}: triplet index outside 0..{n - 1}")
    if frame.duplicated(subset=["i", "j"]).any():
        raise FormatError(f"{path}: duplicate (i, j) triplets")
    matrix = sparse.csr_matrix((frame["w"].to_numpy(), (i, j)), shape=(n, n))
    return WeightMatrix(matrix, row_normalized=normalized)


# --- coordinates and datasets --------------------------------------------------


def read_coordinates(path) -> Tuple[Tuple[str, ...], Tuple[GeoPoint, ...]]:
    frame = read_table(path, dtype={"id": str})
    missing = {"id", "lon", "lat"} - set(frame.columns)
    if missing:
        raise FormatError(f"{path}: missing columns {sorted(missing)}")
    if frame["id"].duplicated().any():
        raise FormatError(f"{path}: duplicate ids")
    coords = tuple(GeoPoint(float(lon), float(lat)) for lon, lat in zip(frame["lon"], frame["lat"]))
    return tuple(frame["id"]), coords


def write_coordinates(ids, coords, path) -> None:
    frame = pd.DataFrame(
        {"id": list(ids), "lon": [p.longitude for p in coords], "lat": [p.latitude for p in coords]}
    )
    _write_csv(frame, path)


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Rows of a dataset file.

    Response bounds may be missing (NaN) on rows to be predicted.
    """

    ids: Tuple[str, ...]
    x: Tuple[Interval, ...]
    y_lower: np.ndarray
    y_upper: np.ndarray
    coords: Optional[Tuple[GeoPoint, ...]] = None
    split: Optional[Tuple[str, ...]] = None

    @property
    def n(self) -> int:
        return len(self.ids)

    def has_response(self, idx=None) -> bool:
        idx = np.arange(self.n) if idx is None else np.asarray(idx, dtype=int)
        return bool(np.all(np.isfinite(self.y_lower[idx])) and np.all(np.isfinite(self.y_upper[idx])))

    def sample(self, idx=None) -> IntervalSample:
        """Interval sample of the given rows (all rows by default)."""
        idx = np.arange(self.n) if idx is None else np.asarray(idx, dtype=int)
        if not self.has_response(idx):
            raise FormatError("response bounds are missing on rows that need them")
        x_lower, x_upper = bounds_array(self.x)
        return IntervalSample.from_bounds(
            self.y_lower[idx], self.y_upper[idx], x_lower[idx], x_upper[idx]
        )

    def design_matrix(self) -> np.ndarray:
        x_lower, x_upper = bounds_array(self.x)
        return np.column_stack(
            [np.ones(self.n), (x_lower + x_upper) / 2.0, (x_upper - x_lower) / 2.0]
        )

    def truth(self, idx) -> List[Interval]:
        return [Interval(float(self.y_lower[i]), float(self.y_upper[i])) for i in idx]


def read_dataset(path) -> Dataset:
    """
    Read a dataset CSV.

    Raises:
        FormatError: On missing columns, duplicate ids or half-missing responses
        InvalidInterval: If a row has lower > upper
    """
    frame = read_table(path, dtype={"id": str, "split": str})
    missing = set(DATASET_COLUMNS) - set(frame.columns)
    if missing:
        raise FormatError(f"{path}: missing columns {sorted(missing)}")
    if frame["id"].isna().any() or frame["id"].duplicated().any():
        raise FormatError(f"{path}: ids must be present and unique")
    try:
        numeric = frame[list(DATASET_COLUMNS[1:])].astype(float)
    except ValueError as e:
        raise FormatError(f"{path}: non-numeric bound: {e}") from e
    if numeric[["x_lower", "x_upper"]].isna().any().any():
        raise FormatError(f"{path}: covariate bounds are required on every row")
    y_lower = numeric["y_lower"].to_numpy()
    y_upper = numeric["y_upper"].to_numpy()
    if np.any(np.isnan(y_lower) != np.isnan(y_upper)):
        raise FormatError(f"{path}: a row has only one response bound")
    present = ~np.isnan(y_lower)
    for lo, hi in zip(y_lower[present], y_upper[present]):
        Interval(float(lo), float(hi))
    x = tuple(
        Interval(float(lo), float(hi)) for lo, hi in zip(numeric["x_lower"], numeric["x_upper"])
    )

    coords = None
    if {"lon", "lat"} <= set(frame.columns):
        coords = tuple(GeoPoint(float(lon), float(lat)) for lon, lat in zip(frame["lon"], frame["lat"]))
    split = None
    if "split" in frame.columns:
        split = tuple(str(v).strip().lower() for v in frame["split"].fillna(""))
    return Dataset(
        ids=tuple(frame["id"]),
        x=x,
        y_lower=y_lower,
        y_upper=y_upper,
        coords=coords,
        split=split,
    )


def write_dataset_frame(frame: pd.DataFrame, path) -> None:
    _write_csv(frame, path)


# --- models ------------------------------------------------------------------------


def data_hash(sample: IntervalSample, w: Optional[WeightMatrix], hold_out: Optional[HoldOut] = None) -> str:
    """sha256 over the sample's bounds, the weight triplets and the held-out covariates."""
    digest = hashlib.sha256()
    for intervals in (sample.y, sample.x):
        lower, upper = bounds_array(intervals)
        digest.update(np.ascontiguousarray(lower, dtype="<f8").tobytes())
        digest.update(np.ascontiguousarray(upper, dtype="<f8").tobytes())
    if w is not None:
        coo = w.matrix.tocoo()
        digest.update(str(w.n).encode("ascii"))
        digest.update(np.ascontiguousarray(coo.row, dtype="<i8").tobytes())
        digest.update(np.ascontiguousarray(coo.col, dtype="<i8").tobytes())
        digest.update(np.ascontiguousarray(coo.data, dtype="<f8").tobytes())
    if hold_out is not None:
        digest.update(np.ascontiguousarray(hold_out.test_idx, dtype="<i8").tobytes())
        digest.update(np.ascontiguousarray(hold_out.x_test, dtype="<f8").tobytes())
    return digest.hexdigest()


def write_model(fit: FitResult, path, sample_hash: str) -> None:
    payload = {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "data_hash": sample_hash,
        "fit": fit.to_dict(),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def read_model(path) -> Tuple[FitResult, str]:
    """
    Read a model file.

    Returns:
        (fit, data_hash)
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError as e:
        raise FormatError(f"file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise FormatError(f"{path}: not an {MODEL_FORMAT} file")
    if payload.get("version") != MODEL_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported model version {payload.get('version')}")
    try:
        fit = FitResult.from_dict(payload["fit"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed fit: {e}") from e
    return fit, str(payload.get("data_hash", ""))


def check_model_hash(
    expected: str, sample: IntervalSample, w: Optional[WeightMatrix], hold_out: Optional[HoldOut] = None
) -> None:
    actual = data_hash(sample, w, hold_out)
    if actual != expected:
        raise HashMismatch(
            "training data or weights differ from those the model was fitted on (use --force to override)"
        )


def read_json(path) -> object:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as e:
        raise FormatError(f"file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON: {e}") from e


# --- outputs ----------------------------------------------------------------------


def prediction_frame(ids, pred: PredictionResult) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "id": [ids[i] for i in pred.test_idx],
            "yc_hat": pred.yc_hat,
            "yr_hat": pred.yr_hat,
            "y_lower_hat": [iv.lower for iv in pred.intervals],
            "y_upper_hat": [iv.upper for iv in pred.intervals],
            "clamped": pred.clamped.astype(int),
        }
    )


def write_predictions(ids, pred: PredictionResult, path) -> None:
    _write_csv(prediction_frame(ids, pred), path)


def write_scatter(ids, centered: np.ndarray, lagged: np.ndarray, path) -> None:
    _write_csv(pd.DataFrame({"id": list(ids), "z": centered, "lag": lagged}), path)


def write_report(report, out_dir) -> Dict[str, Path]:
    """
    Write a scenario report as <name>.csv (summary), <name>.txt (aligned
    table) and <name>_reps.csv (per replication).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = report.config.name
    paths = {
        "summary": out_dir / f"{name}.csv",
        "text": out_dir / f"{name}.txt",
        "reps": out_dir / f"{name}_reps.csv",
    }
    _write_csv(report.summary_frame(), paths["summary"])
    _write_csv(report.raw_frame(), paths["reps"])
    with open(paths["text"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_text())
    logger.info("wrote %s report to %s", name, out_dir)
    return paths
