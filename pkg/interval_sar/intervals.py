"""
Interval values, the center-range map, and interval prediction metrics.

All formulas use the semi-length convention: radius = (upper - lower) / 2.
"""

import math
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .errors import InvalidInterval, LengthMismatch, NegativeRadius


@dataclass(frozen=True)
class Interval:
    """A closed real interval [lower, upper]."""

    lower: float
    upper: float

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise InvalidInterval(f"non-finite bound in [{self.lower}, {self.upper}]")
        if self.lower > self.upper:
            raise InvalidInterval(
                f"lower bound {self.lower} exceeds upper bound {self.upper}"
            )

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class CenterRange:
    """Midpoint and semi-length of an interval."""

    center: float
    radius: float


def to_center_range(iv: Interval) -> CenterRange:
    return CenterRange(
        center=(iv.lower + iv.upper) / 2.0, radius=(iv.upper - iv.lower) / 2.0
    )


def from_center_range(cr: CenterRange) -> Interval:
    """
    Inverse of to_center_range.

    Raises:
        NegativeRadius: If cr.radius < 0. Clamping is the caller's decision.
    """
    if cr.radius < 0:
        raise NegativeRadius(f"radius {cr.radius} is negative")
    return Interval(cr.center - cr.radius, cr.center + cr.radius)


def overlap_measure(a: Interval, b: Interval) -> Tuple[float, float]:
    """
    Lebesgue measure of the intersection and of the union of two intervals.

    Returns:
        (intersection, union); union = |a| + |b| - intersection
    """
    inter = max(0.0, min(a.upper, b.upper) - max(a.lower, b.lower))
    return inter, a.width + b.width - inter


def bounds_array(intervals: Sequence[Interval]) -> Tuple[np.ndarray, np.ndarray]:
    """Split a sequence of intervals into (lower, upper) float arrays."""
    lower = np.fromiter((iv.lower for iv in intervals), dtype=float, count=len(intervals))
    upper = np.fromiter((iv.upper for iv in intervals), dtype=float, count=len(intervals))
    return lower, upper


def _paired_bounds(truth: Sequence[Interval], pred: Sequence[Interval]):
    if len(truth) != len(pred):
        raise LengthMismatch(
            f"truth has {len(truth)} intervals but prediction has {len(pred)}"
        )
    if len(truth) == 0:
        raise LengthMismatch("metrics need at least one interval pair")
    return bounds_array(truth) + bounds_array(pred)


def _intersection_union(tl, tu, pl, pu) -> Tuple[np.ndarray, np.ndarray]:
    inter = np.maximum(0.0, np.minimum(tu, pu) - np.maximum(tl, pl))
    union = (tu - tl) + (pu - pl) - inter
    return inter, union


def accuracy_rate(truth: Sequence[Interval], pred: Sequence[Interval]) -> float:
    """
    Mean ratio of intersection to union measure over paired intervals.

    A pair whose union has zero measure (both the same point) scores 1;
    distinct points score 0.
    """
    tl, tu, pl, pu = _paired_bounds(truth, pred)
    inter, union = _intersection_union(tl, tu, pl, pu)
    degenerate = union == 0.0
    same_point = degenerate & (tl == pl)
    terms = np.where(degenerate, same_point.astype(float), inter / np.where(degenerate, 1.0, union))
    return float(np.mean(terms))


def rmse_bounds(truth: Sequence[Interval], pred: Sequence[Interval]) -> Tuple[float, float]:
    """Root mean squared error of the lower bounds and of the upper bounds."""
    tl, tu, pl, pu = _paired_bounds(truth, pred)
    return float(np.sqrt(np.mean((tl - pl) ** 2))), float(np.sqrt(np.mean((tu - pu) ** 2)))


def count_disjoint(truth: Sequence[Interval], pred: Sequence[Interval]) -> int:
    """
    Number of pairs whose intersection has zero measure.

    Touching intervals (a shared endpoint only) count as disjoint. A pair of
    identical degenerate intervals is not counted.
    """
    tl, tu, pl, pu = _paired_bounds(truth, pred)
    inter, union = _intersection_union(tl, tu, pl, pu)
    identical_points = (union == 0.0) & (tl == pl)
    return int(np.count_nonzero((inter == 0.0) & ~identical_points))


@dataclass(frozen=True, eq=False)
class IntervalSample:
    """
    n paired observations of an interval response y and interval covariate x.

    The center and radius vectors are cached on construction.
    """

    y: Tuple[Interval, ...]
    x: Tuple[Interval, ...]
    yc: np.ndarray = field(init=False, repr=False)
    yr: np.ndarray = field(init=False, repr=False)
    xc: np.ndarray = field(init=False, repr=False)
    xr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.y) != len(self.x):
            raise LengthMismatch(f"{len(self.y)} responses but {len(self.x)} covariates")
        y_lower, y_upper = bounds_array(self.y)
        x_lower, x_upper = bounds_array(self.x)
        for name, values in (
            ("yc", (y_lower + y_upper) / 2.0),
            ("yr", (y_upper - y_lower) / 2.0),
            ("xc", (x_lower + x_upper) / 2.0),
            ("xr", (x_upper - x_lower) / 2.0),
        ):
            values.setflags(write=False)
            object.__setattr__(self, name, values)

    @classmethod
    def from_bounds(cls, y_lower, y_upper, x_lower, x_upper) -> "IntervalSample":
        if len({len(y_lower), len(y_upper), len(x_lower), len(x_upper)}) != 1:
            raise LengthMismatch("bound arrays have different lengths")
        y = tuple(Interval(float(lo), float(hi)) for lo, hi in zip(y_lower, y_upper))
        x = tuple(Interval(float(lo), float(hi)) for lo, hi in zip(x_lower, x_upper))
        return cls(y=y, x=x)

    @classmethod
    def from_center_range(cls, yc, yr, xc, xr) -> "IntervalSample":
        yc, yr, xc, xr = (np.asarray(v, dtype=float) for v in (yc, yr, xc, xr))
        if np.any(yr < 0) or np.any(xr < 0):
            raise NegativeRadius("sample radii must be nonnegative")
        return cls.from_bounds(yc - yr, yc + yr, xc - xr, xc + xr)

    @property
    def n(self) -> int:
        return len(self.y)

    def design_matrix(self) -> np.ndarray:
        """Covariate matrix X = [1, xc, xr] of shape (n, 3)."""
        return np.column_stack([np.ones(self.n), self.xc, self.xr])

    def subset(self, idx) -> "IntervalSample":
        idx = np.asarray(idx, dtype=int)
        return IntervalSample(
            y=tuple(self.y[i] for i in idx), x=tuple(self.x[i] for i in idx)
        )
