"""
Data models for fitted interval regressions and their predictions.

Defines the structure and (de)serialization of fit results, grid profiles,
predictions and evaluation metrics.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from .intervals import Interval


class ModelKind(str, Enum):
    """The three interval models that can be fitted."""

    ICSM = "ICSM"  # spatial lag + constraints
    ICM = "ICM"  # constraints, no spatial lag
    ISM = "ISM"  # spatial lag, no constraints


class PredictionMethod(str, Enum):
    TC = "TC"
    BP = "BP"


@dataclass(frozen=True)
class GridPoint:
    """
    One evaluated value of the spatial lag parameter.

    Attributes:
        rho: Grid value
        objective: ||Y - Z beta||^2 at the inner optimum (None when skipped)
        skipped: True when I - rho W was numerically singular
        n_active: Number of active constraints at the inner optimum
    """

    rho: float
    objective: Optional[float]
    skipped: bool = False
    n_active: int = 0

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "objective": self.objective,
            "skipped": self.skipped,
            "n_active": self.n_active,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridPoint":
        return cls(
            rho=float(data["rho"]),
            objective=None if data.get("objective") is None else float(data["objective"]),
            skipped=bool(data.get("skipped", False)),
            n_active=int(data.get("n_active", 0)),
        )


@dataclass(frozen=True, eq=False)
class FitResult:
    """
    Data model for a fitted interval model.

    Attributes:
        model: ICSM, ICM or ISM
        rho: Selected spatial lag parameter (0 for ICM)
        beta_c: Center coefficients (intercept, x center, x radius)
        beta_r: Radius coefficients (intercept, x center, x radius)
        objective: Sum of squared center and radius residuals at the optimum
        sigma2_c: Mean squared center residual, denominator n
        sigma2_r: Mean squared radius residual, denominator n
        residuals_c: Center residuals (I - rho W) yc - X beta_c
        residuals_r: Radius residuals yr - X beta_r
        grid_profile: Every evaluated grid point, in grid order
        n_active: Active constraints at the selected optimum
    """

    model: ModelKind
    rho: float
    beta_c: Tuple[float, float, float]
    beta_r: Tuple[float, float, float]
    objective: float
    sigma2_c: float
    sigma2_r: float
    residuals_c: np.ndarray = field(repr=False)
    residuals_r: np.ndarray = field(repr=False)
    grid_profile: Tuple[GridPoint, ...] = field(default=(), repr=False)
    n_active: int = 0

    @property
    def n(self) -> int:
        return int(self.residuals_c.size)

    @property
    def skipped_rhos(self) -> List[float]:
        return [gp.rho for gp in self.grid_profile if gp.skipped]

    def summary(self) -> dict:
        """Headline numbers for printing."""
        return {
            "model": self.model.value,
            "rho": self.rho,
            "beta_c": list(self.beta_c),
            "beta_r": list(self.beta_r),
            "sigma2_c": self.sigma2_c,
            "sigma2_r": self.sigma2_r,
            "objective": self.objective,
            "n_active": self.n_active,
            "n_grid": len(self.grid_profile),
            "n_skipped": len(self.skipped_rhos),
        }

    def to_dict(self) -> dict:
        """
        Convert the fit to a JSON-ready dictionary.

        Returns:
            dict: Every field; arrays become lists of floats
        """
        return {
            "model": self.model.value,
            "rho": self.rho,
            "beta_c": list(self.beta_c),
            "beta_r": list(self.beta_r),
            "objective": self.objective,
            "sigma2_c": self.sigma2_c,
            "sigma2_r": self.sigma2_r,
            "residuals_c": self.residuals_c.tolist(),
            "residuals_r": self.residuals_r.tolist(),
            "grid_profile": [gp.to_dict() for gp in self.grid_profile],
            "n_active": self.n_active,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FitResult":
        """
        Create a FitResult from a dictionary produced by to_dict.

        Args:
            data: Dictionary containing fit fields

        Returns:
            FitResult: New instance populated from dictionary
        """
        return cls(
            model=ModelKind(data["model"]),
            rho=float(data["rho"]),
            beta_c=tuple(float(v) for v in data["beta_c"]),
            beta_r=tuple(float(v) for v in data["beta_r"]),
            objective=float(data["objective"]),
            sigma2_c=float(data["sigma2_c"]),
            sigma2_r=float(data["sigma2_r"]),
            residuals_c=np.asarray(data.get("residuals_c", []), dtype=float),
            residuals_r=np.asarray(data.get("residuals_r", []), dtype=float),
            grid_profile=tuple(GridPoint.from_dict(gp) for gp in data.get("grid_profile", [])),
            n_active=int(data.get("n_active", 0)),
        )


@dataclass(frozen=True, eq=False)
class FittedIntervals:
    """
    In-sample fitted centers and radii.

    Unconstrained fits can produce negative radii; those units are flagged in
    `invalid` and their bounds are reported as computed (lower > upper).
    """

    centers: np.ndarray
    radii: np.ndarray

    @property
    def lower(self) -> np.ndarray:
        return self.centers - self.radii

    @property
    def upper(self) -> np.ndarray:
        return self.centers + self.radii

    @property
    def invalid(self) -> np.ndarray:
        return self.radii < 0

    def intervals(self) -> List[Interval]:
        """Interval objects; raises InvalidInterval if any unit is flagged."""
        return [Interval(float(lo), float(hi)) for lo, hi in zip(self.lower, self.upper)]


@dataclass(frozen=True, eq=False)
class PredictionResult:
    """
    Out-of-sample interval predictions.

    Attributes:
        test_idx: Indices of the predicted units in the full sample
        yc_hat: Predicted centers
        yr_hat: Predicted radii before clamping
        intervals: [yc - max(yr, 0), yc + max(yr, 0)]
        clamped: True where yr_hat was negative and clamped to 0
        method: TC or BP
    """

    test_idx: np.ndarray
    yc_hat: np.ndarray
    yr_hat: np.ndarray
    intervals: Tuple[Interval, ...]
    clamped: np.ndarray
    method: PredictionMethod


@dataclass(frozen=True)
class EvaluationMetrics:
    """Interval prediction accuracy on a test set."""

    rmse_l: float
    rmse_u: float
    ar: float
    n_d: int
    mse_c: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "rmse_l": self.rmse_l,
            "rmse_u": self.rmse_u,
            "ar": self.ar,
            "n_d": self.n_d,
            "mse_c": self.mse_c,
        }
