"""
Out-of-sample prediction for fitted interval models.

TC is the reduced-form trend (I - rho W)^-1 X beta_c on all units. BP corrects
the test-unit trend with the training residuals through the precision matrix
Q = (I - rho W)'(I - rho W) / sigma2:

    BP_o = TC_o - Q_o^-1 Q_os (Y_s - TC_s)

Radii are always predicted by the linear form X beta_r.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .config import SolverOptions
from .errors import IntervalSarError, LengthMismatch, NonPositiveSigma2, ShapeMismatch, SingularQo
from .estimators import HoldOut, spatial_filter
from .intervals import Interval, IntervalSample, accuracy_rate, bounds_array, count_disjoint, rmse_bounds
from .models import EvaluationMetrics, FitResult, PredictionMethod, PredictionResult
from .weights import WeightMatrix, row_normalize

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SamplePartition:
    """
    Training and test units of one sample.

    Attributes:
        train_idx: Training unit indices
        test_idx: Test unit indices; disjoint from train_idx, together covering 0..n-1
        w_full: Weights on all n units (None for models without spatial lag)
    """

    train_idx: np.ndarray
    test_idx: np.ndarray
    w_full: Optional[WeightMatrix] = None

    def __post_init__(self):
        train = np.asarray(self.train_idx, dtype=int).ravel()
        test = np.asarray(self.test_idx, dtype=int).ravel()
        n = train.size + test.size
        both = np.concatenate([train, test])
        if np.unique(both).size != n or (n and (both.min() < 0 or both.max() != n - 1)):
            raise IntervalSarError("train and test indices must be disjoint and cover 0..n-1")
        if train.size == 0:
            raise IntervalSarError("partition needs at least one training unit")
        if self.w_full is not None and self.w_full.n != n:
            raise ShapeMismatch(f"weights are {self.w_full.n} x {self.w_full.n} but the partition has {n} units")
        train.setflags(write=False)
        test.setflags(write=False)
        object.__setattr__(self, "train_idx", train)
        object.__setattr__(self, "test_idx", test)

    @property
    def n(self) -> int:
        return self.train_idx.size + self.test_idx.size

    @classmethod
    def random(
        cls,
        n: int,
        train_fraction: float,
        rng: np.random.Generator,
        w_full: Optional[WeightMatrix] = None,
    ) -> "SamplePartition":
        """
        Uniform split without replacement; round(train_fraction * n) units train,
        at least one unit on each side.
        """
        if not 0.0 < train_fraction < 1.0:
            raise IntervalSarError(f"train_fraction must be in (0, 1), got {train_fraction}")
        if n < 2:
            raise IntervalSarError("a split needs at least two units")
        n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
        order = rng.permutation(n)
        return cls(np.sort(order[:n_train]), np.sort(order[n_train:]), w_full)

    @classmethod
    def from_labels(cls, labels: Sequence[str], w_full: Optional[WeightMatrix] = None) -> "SamplePartition":
        """Split by 'train' / 'test' labels, as in a dataset split column."""
        labels = np.asarray([str(v).strip().lower() for v in labels])
        unknown = set(labels) - {"train", "test"}
        if unknown:
            raise IntervalSarError(f"split labels must be 'train' or 'test', got {sorted(unknown)}")
        return cls(np.flatnonzero(labels == "train"), np.flatnonzero(labels == "test"), w_full)

    def hold_out(self, x_all: np.ndarray) -> HoldOut:
        """The test units as a hold-out for fitting on the training units with w_full."""
        x_all = np.asarray(x_all, dtype=float)
        if x_all.shape[0] != self.n:
            raise ShapeMismatch(f"covariate matrix has {x_all.shape[0]} rows but the partition has {self.n} units")
        return HoldOut(self.train_idx, self.test_idx, x_all[self.test_idx])

    def training_weights(self) -> Optional[WeightMatrix]:
        """
        Weights restricted to training units, row-normalized again when the full
        matrix was. Used to test fitted residuals for autocorrelation, not to fit.
        """
        if self.w_full is None:
            return None
        sub = self.w_full.submatrix(self.train_idx)
        return row_normalize(sub) if self.w_full.row_normalized else sub


def predict_tc(
    fit: FitResult,
    x_all: np.ndarray,
    w_full: Optional[WeightMatrix],
    options: SolverOptions = SolverOptions(),
) -> np.ndarray:
    """
    Trend-corrected center predictions (I - rho W)^-1 X beta_c for all units.

    Raises:
        SingularA: If I - rho W is singular on the full sample
    """
    trend = np.asarray(x_all, dtype=float) @ np.asarray(fit.beta_c)
    if fit.rho == 0.0:
        return trend
    if w_full is None:
        raise ShapeMismatch(f"rho = {fit.rho} needs the full-sample weight matrix")
    if w_full.n != trend.size:
        raise ShapeMismatch(f"weights are {w_full.n} x {w_full.n} but X has {trend.size} rows")
    _, Ainv, _ = spatial_filter(w_full, fit.rho, options)
    return Ainv @ trend


def precision_matrix(w: WeightMatrix, rho: float, sigma2: float) -> np.ndarray:
    """Q = (I - rho (W' + W) + rho^2 W'W) / sigma2."""
    A = np.eye(w.n) - rho * w.toarray()
    return (A.T @ A) / sigma2


def predict_bp(
    fit: FitResult,
    part: SamplePartition,
    y_train_c: np.ndarray,
    x_all: np.ndarray,
    options: SolverOptions = SolverOptions(),
) -> np.ndarray:
    """
    Best linear predictor of the test centers given the training centers.

    Falls back to TC, returning the test rows of predict_tc unchanged, when
    sigma2_c == 0 (the precision matrix is undefined, and the training
    residuals vanish so the correction would be zero), when rho == 0 (Q is
    diagonal and Q_os is zero) or when there are no test units. The sigma2_c
    fallback is logged at DEBUG.

    Raises:
        NonPositiveSigma2: If sigma2_c is negative or not finite
        SingularQo: If the test block of Q is not positive definite
    """
    sigma2 = fit.sigma2_c
    if not math.isfinite(sigma2) or sigma2 < 0:
        raise NonPositiveSigma2(f"sigma2_c = {sigma2} cannot scale the precision matrix")
    y_train_c = np.asarray(y_train_c, dtype=float)
    if y_train_c.size != part.train_idx.size:
        raise LengthMismatch(f"{y_train_c.size} training centers for {part.train_idx.size} training units")

    tc = predict_tc(fit, x_all, part.w_full, options)
    tc_o = tc[part.test_idx]
    if sigma2 == 0.0 and fit.rho != 0.0:
        logger.debug("sigma2_c is 0, BP falls back to TC")
    if sigma2 == 0.0 or fit.rho == 0.0 or part.test_idx.size == 0:
        return tc_o

    Q = precision_matrix(part.w_full, fit.rho, sigma2)
    Qo = Q[np.ix_(part.test_idx, part.test_idx)]
    Qos = Q[np.ix_(part.test_idx, part.train_idx)]
    try:
        factor = linalg.cho_factor(Qo)
    except linalg.LinAlgError as e:
        raise SingularQo("test block of the precision matrix is not positive definite") from e
    correction = linalg.cho_solve(factor, Qos @ (y_train_c - tc[part.train_idx]))
    return tc_o - correction


def predict_from_covariates(
    fit: FitResult,
    part: SamplePartition,
    x_all: np.ndarray,
    y_train_c: np.ndarray,
    method: PredictionMethod = PredictionMethod.BP,
    options: SolverOptions = SolverOptions(),
) -> PredictionResult:
    """
    Predict test intervals from covariates on all units and training centers.

    Negative radius predictions are clamped to 0 and flagged per unit.
    """
    method = PredictionMethod(method)
    x_all = np.asarray(x_all, dtype=float)
    if x_all.shape != (part.n, 3):
        raise ShapeMismatch(f"covariate matrix must be {part.n} x 3, got {x_all.shape}")
    if method is PredictionMethod.BP:
        yc_hat = predict_bp(fit, part, y_train_c, x_all, options)
    else:
        yc_hat = predict_tc(fit, x_all, part.w_full, options)[part.test_idx]
    yr_hat = x_all[part.test_idx] @ np.asarray(fit.beta_r)
    clamped = yr_hat < 0
    if np.any(clamped):
        logger.info("clamped %d negative radius predictions to 0", int(np.count_nonzero(clamped)))
    radii = np.maximum(yr_hat, 0.0)
    intervals = tuple(Interval(float(c - r), float(c + r)) for c, r in zip(yc_hat, radii))
    return PredictionResult(
        test_idx=part.test_idx,
        yc_hat=yc_hat,
        yr_hat=yr_hat,
        intervals=intervals,
        clamped=clamped,
        method=method,
    )


def predict_intervals(
    fit: FitResult,
    part: SamplePartition,
    sample: IntervalSample,
    method: PredictionMethod = PredictionMethod.BP,
    options: SolverOptions = SolverOptions(),
) -> PredictionResult:
    """Predict the test units of a sample that holds all n units."""
    if sample.n != part.n:
        raise ShapeMismatch(f"sample has {sample.n} units but the partition has {part.n}")
    return predict_from_covariates(
        fit, part, sample.design_matrix(), sample.yc[part.train_idx], method, options
    )


def evaluate(pred: PredictionResult, truth: Sequence[Interval]) -> EvaluationMetrics:
    """
    RMSE of lower and upper bounds, accuracy rate, disjoint count, and the
    mean squared center error.
    """
    if len(truth) != len(pred.intervals):
        raise LengthMismatch(f"{len(truth)} true intervals for {len(pred.intervals)} predictions")
    rmse_l, rmse_u = rmse_bounds(truth, pred.intervals)
    lower, upper = bounds_array(truth)
    centers = (lower + upper) / 2.0
    return EvaluationMetrics(
        rmse_l=rmse_l,
        rmse_u=rmse_u,
        ar=accuracy_rate(truth, pred.intervals),
        n_d=count_disjoint(truth, pred.intervals),
        mse_c=float(np.mean((centers - pred.yc_hat) ** 2)),
    )
