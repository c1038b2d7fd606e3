"""
Error types raised by interval-sar.

Every error derives from IntervalSarError, itself a ValueError, so callers
that only care about bad input can keep catching ValueError. The CLI prints
the class name as a machine-parsable prefix.
"""


class IntervalSarError(ValueError):
    """Base class for all library errors."""

    #: CLI exit code used when this error escapes a command
    exit_code = 2

    @property
    def name(self) -> str:
        return type(self).__name__


class EstimationError(IntervalSarError):
    """Base class for failures during fitting or prediction."""

    exit_code = 3


# Intervals and metrics
class InvalidInterval(IntervalSarError):
    """Lower bound exceeds upper bound, or a bound is not finite."""


class NegativeRadius(IntervalSarError):
    """A center-range pair has radius < 0."""


class LengthMismatch(IntervalSarError):
    """Two interval vectors that must be paired have different lengths."""


# Spatial weights
class ZeroDimension(IntervalSarError):
    """A lattice dimension is smaller than one."""


class DegenerateBlock(IntervalSarError):
    """Block weights need at least two members per district."""


class DuplicateCoordinates(IntervalSarError):
    """Two distinct units share a location (zero distance)."""


class ConstantVector(IntervalSarError):
    """Moran's I is undefined for a vector with zero variance."""


class EmptyWeights(IntervalSarError):
    """The weight matrix has no positive entries."""


# Quadratic programming
class Infeasible(EstimationError):
    """No coefficient vector satisfies the inequality constraints."""


class RankDeficient(EstimationError):
    """The design matrix does not have full column rank."""


class MaxIterations(EstimationError):
    """The active-set solver hit its iteration cap."""


class DimensionMismatch(IntervalSarError):
    """Problem and solution dimensions disagree."""


# Estimation and prediction
class SingularA(EstimationError):
    """I - rho W is numerically singular."""


class NoFeasibleGridPoint(EstimationError):
    """Every rho on the grid was skipped."""


class ShapeMismatch(IntervalSarError):
    """A fit is applied to data of the wrong shape."""


class UnnormalizedWeights(IntervalSarError):
    """A spatial fit was given weights that are not row-normalized."""


class SingularQo(EstimationError):
    """The test block of the precision matrix is not positive definite."""


class NonPositiveSigma2(EstimationError):
    """The residual variance estimate is negative or not finite."""


# Simulation and file formats
class TooManyRejections(EstimationError):
    """The data generator could not draw positive radii."""


class HashMismatch(IntervalSarError):
    """A model file was fitted on different training data."""


class FormatError(IntervalSarError):
    """An input file does not follow its documented format."""
