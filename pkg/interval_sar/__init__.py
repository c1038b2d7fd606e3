"""interval-sar: constrained spatial autoregressive regression for interval-valued data."""

__version__ = "0.1.0"

from .errors import EstimationError, IntervalSarError
from .estimators import HoldOut, RhoGrid, fit, fit_icm, fit_icsm, fit_ism, fitted_intervals
from .intervals import Interval, IntervalSample
from .models import FitResult, ModelKind, PredictionMethod
from .predictor import SamplePartition, evaluate, predict_intervals
from .weights import WeightMatrix, block, inverse_distance, morans_i_test, rook, row_normalize

__all__ = [
    "__version__",
    "EstimationError",
    "IntervalSarError",
    "Interval",
    "IntervalSample",
    "WeightMatrix",
    "rook",
    "block",
    "inverse_distance",
    "row_normalize",
    "morans_i_test",
    "HoldOut",
    "RhoGrid",
    "fit",
    "fit_icsm",
    "fit_icm",
    "fit_ism",
    "fitted_intervals",
    "FitResult",
    "ModelKind",
    "PredictionMethod",
    "SamplePartition",
    "predict_intervals",
    "evaluate",
]
