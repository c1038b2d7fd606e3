"""
Estimation of the interval spatial models.

- ICSM: grid search over rho, constrained least squares at every grid point
- ICM:  constrained least squares with rho fixed at 0
- ISM:  grid search over rho, unconstrained least squares

For a given rho the centers follow yc = (I - rho W)^-1 (X beta_c + e_c) and
the radii yr = X beta_r + e_r with X = [1, xc, xr]. The constrained models
additionally require every fitted interval to overlap its observation and
every fitted radius to be nonnegative.
"""

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, sparse

from . import qp
from .config import SolverOptions
from .errors import IntervalSarError, NoFeasibleGridPoint, ShapeMismatch, SingularA, UnnormalizedWeights
from .intervals import IntervalSample
from .models import FitResult, FittedIntervals, GridPoint, ModelKind
from .weights import WeightMatrix

logger = logging.getLogger(__name__)

N_COEF = 3


@dataclass(frozen=True)
class RhoGrid:
    """
    Evenly spaced candidate values start, start + step, ..., stop.

    Values are rounded to 10 decimals so that grid points equal their
    decimal literals (0.3 on the grid is the float 0.3).
    """

    start: float = -1.0
    stop: float = 1.0
    step: float = 0.01

    def __post_init__(self):
        if self.step <= 0:
            raise IntervalSarError(f"grid step must be positive, got {self.step}")
        if self.stop < self.start:
            raise IntervalSarError(f"grid stop {self.stop} is below start {self.start}")

    @classmethod
    def single(cls, rho: float) -> "RhoGrid":
        return cls(start=rho, stop=rho, step=1.0)

    def values(self) -> np.ndarray:
        count = int(round((self.stop - self.start) / self.step)) + 1
        return np.round(self.start + self.step * np.arange(count), 10)

    def to_dict(self) -> dict:
        return {"start": self.start, "stop": self.stop, "step": self.step}

    @classmethod
    def from_dict(cls, data: dict) -> "RhoGrid":
        return cls(
            start=float(data.get("start", -1.0)),
            stop=float(data.get("stop", 1.0)),
            step=float(data.get("step", 0.01)),
        )



@dataclass(frozen=True, eq=False)
class HoldOut:
    """
    Units of the full sample left out of a fit.

    Their centers are unobserved, but their covariates and their rows and
    columns of W stay in the center equation.

    Attributes:
        train_idx: Positions of the fitted units in the full sample, in sample order
        test_idx: Positions of the held-out units
        x_test: Design rows [1, xc, xr] of the held-out units
    """

    train_idx: np.ndarray
    test_idx: np.ndarray
    x_test: np.ndarray

    def __post_init__(self):
        train = np.asarray(self.train_idx, dtype=int).ravel()
        test = np.asarray(self.test_idx, dtype=int).ravel()
        x_test = np.asarray(self.x_test, dtype=float)
        if x_test.shape != (test.size, N_COEF):
            raise ShapeMismatch(f"held-out design must be {test.size} x {N_COEF}, got {x_test.shape}")
        object.__setattr__(self, "train_idx", train)
        object.__setattr__(self, "test_idx", test)
        object.__setattr__(self, "x_test", x_test)

    @property
    def n(self) -> int:
        return self.train_idx.size + self.test_idx.size

    def full_design(self, x_train: np.ndarray) -> np.ndarray:
        X = np.empty((self.n, N_COEF))
        X[self.train_idx] = x_train
        X[self.test_idx] = self.x_test
        return X


@dataclass(frozen=True, eq=False)
class DesignBlocks:
    """
    Matrices of the least-squares problem at one rho.

    Without held-out units the center rows are A yc = X beta_c + e_c. With
    held-out units the unknown centers enter through A[:, test]; the center
    rows are projected onto the orthogonal complement of that block
    (columns of `basis`), which leaves n_train rows with iid errors.

    Attributes:
        rho: Spatial lag value
        A: I - rho W on the full sample
        Ainv: Inverse of A
        X: [1, xc, xr] of the fitted units (n x 3)
        Xc: Center design, X itself or basis' X_full
        Z: blockdiag(Xc, X) (2n x 6)
        Y: [A yc; yr], or [basis' A[:, train] yc; yr] (2n)
        G: [[-M, -X], [M, -X], [0, -X]] with M the fitted-unit rows of Ainv X_full (3n x 6)
        h: [yr - yc; yc + yr; 0] (3n)
        condition: 1-norm condition number of A
        basis: Orthonormal complement of A[:, test] (None without held-out units)
    """

    rho: float
    A: np.ndarray
    Ainv: np.ndarray
    X: np.ndarray
    Xc: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    G: np.ndarray
    h: np.ndarray
    condition: float
    basis: Optional[np.ndarray] = None

    def qp_problem(self) -> qp.QpProblem:
        return qp.QpProblem(Z=self.Z, Y=self.Y, G=self.G, h=self.h)

    def feasible_start(self) -> np.ndarray:
        """
        A strictly feasible coefficient vector.

        Only the radius intercept is nonzero; it exceeds every -h so the two
        overlap rows and the positivity rows all hold with slack >= 1.
        """
        beta = np.zeros(2 * N_COEF)
        beta[N_COEF] = max(0.0, float(np.max(-self.h))) + 1.0
        return beta

    def center_residuals(self, beta_c: np.ndarray) -> np.ndarray:
        return self.Y[: self.X.shape[0]] - self.Xc @ beta_c


def zero_weights(n: int) -> WeightMatrix:
    return WeightMatrix(sparse.csr_matrix((n, n)))


def spatial_filter(w: WeightMatrix, rho: float, options: SolverOptions = SolverOptions()):
    """
    I - rho W, its inverse, and its 1-norm condition number.

    Raises:
        SingularA: If the matrix is singular or its condition exceeds the limit
    """
    n = w.n
    A = np.eye(n) - rho * w.toarray()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            lu = linalg.lu_factor(A)
            Ainv = linalg.lu_solve(lu, np.eye(n))
        except (linalg.LinAlgError, ValueError) as e:
            raise SingularA(f"I - {rho} W is singular") from e
    if not np.all(np.isfinite(Ainv)):
        raise SingularA(f"I - {rho} W is singular")
    condition = float(np.linalg.norm(A, 1) * np.linalg.norm(Ainv, 1))
    if condition > options.condition_limit:
        raise SingularA(f"I - {rho} W has condition number {condition:.3e}")
    return A, Ainv, condition


def _check_sizes(sample: IntervalSample, w: WeightMatrix, hold_out: Optional[HoldOut]) -> None:
    if hold_out is None:
        if w.n != sample.n:
            raise ShapeMismatch(f"weights are {w.n} x {w.n} but the sample has {sample.n} units")
        return
    if hold_out.train_idx.size != sample.n:
        raise ShapeMismatch(f"hold-out lists {hold_out.train_idx.size} fitted units but the sample has {sample.n}")
    if w.n != hold_out.n:
        raise ShapeMismatch(f"weights are {w.n} x {w.n} but the full sample has {hold_out.n} units")


def _require_row_normalized(w: WeightMatrix) -> None:
    if not w.row_normalized:
        raise UnnormalizedWeights(
            "spatial fits need row-normalized weights; the rho grid assumes a unit spectral radius"
        )


def assemble(
    sample: IntervalSample,
    w: WeightMatrix,
    rho: float,
    options: SolverOptions = SolverOptions(),
    hold_out: Optional[HoldOut] = None,
) -> DesignBlocks:
    """
    Build the constrained least-squares blocks at a given rho.

    With a hold-out, w covers the full sample and the sample holds only the
    fitted units.

    Raises:
        ShapeMismatch: If w, sample and hold-out sizes disagree
        SingularA: If I - rho W is numerically singular
    """
    _check_sizes(sample, w, hold_out)
    A, Ainv, condition = spatial_filter(w, rho, options)
    X = sample.design_matrix()
    zeros = np.zeros_like(X)
    basis = None
    if hold_out is None:
        M = Ainv @ X
        Xc, Yc = X, A @ sample.yc
    else:
        train, test = hold_out.train_idx, hold_out.test_idx
        X_full = hold_out.full_design(X)
        M = (Ainv @ X_full)[train]
        lagged = A[:, train] @ sample.yc
        if test.size:
            q, _ = linalg.qr(A[:, test])
            basis = q[:, test.size:]
        else:
            basis = np.eye(hold_out.n)
        Xc, Yc = basis.T @ X_full, basis.T @ lagged
    return DesignBlocks(
        rho=float(rho),
        A=A,
        Ainv=Ainv,
        X=X,
        Xc=Xc,
        Z=np.block([[Xc, zeros], [zeros, X]]),
        Y=np.concatenate([Yc, sample.yr]),
        G=np.block([[-M, -X], [M, -X], [zeros, -X]]),
        h=np.concatenate([sample.yr - sample.yc, sample.yc + sample.yr, np.zeros(sample.n)]),
        condition=condition,
        basis=basis,
    )


@dataclass(frozen=True, eq=False)
class _PointOutcome:
    rho: float
    beta: Optional[np.ndarray]
    objective: Optional[float]
    n_active: int = 0

    @property
    def skipped(self) -> bool:
        return self.beta is None


def _evaluate_points(
    sample: IntervalSample,
    w: WeightMatrix,
    rhos: Sequence[float],
    constrained: bool,
    options: SolverOptions,
    hold_out: Optional[HoldOut],
) -> List[_PointOutcome]:
    outcomes = []
    previous_active: Optional[Tuple[int, ...]] = None
    for rho in rhos:
        try:
            blocks = assemble(sample, w, float(rho), options, hold_out)
        except SingularA as e:
            logger.info("skipping grid point rho=%.4f: %s", rho, e)
            outcomes.append(_PointOutcome(rho=float(rho), beta=None, objective=None))
            continue
        if constrained:
            problem = blocks.qp_problem()
            solution = qp.solve(
                problem, options, x0=blocks.feasible_start(), working_set=previous_active
            )
            previous_active = solution.active_set
            outcomes.append(
                _PointOutcome(
                    rho=float(rho),
                    beta=solution.beta,
                    objective=solution.objective,
                    n_active=len(solution.active_set),
                )
            )
        else:
            beta = qp.least_squares(blocks.Z, blocks.Y, options)
            resid = blocks.Y - blocks.Z @ beta
            outcomes.append(_PointOutcome(rho=float(rho), beta=beta, objective=float(resid @ resid)))
    return outcomes


def _grid_search(
    sample: IntervalSample,
    w: WeightMatrix,
    grid: RhoGrid,
    kind: ModelKind,
    options: SolverOptions,
    jobs: int,
    hold_out: Optional[HoldOut] = None,
) -> FitResult:
    if sample.n == 0:
        raise ShapeMismatch("cannot fit an empty sample")
    _check_sizes(sample, w, hold_out)
    rhos = grid.values()
    constrained = kind is not ModelKind.ISM
    jobs = max(1, min(jobs, len(rhos)))
    if jobs == 1:
        outcomes = _evaluate_points(sample, w, rhos, constrained, options, hold_out)
    else:
        # contiguous chunks keep warm starts effective inside each worker
        chunks = np.array_split(rhos, jobs)
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            parts = ex.map(
                lambda chunk: _evaluate_points(sample, w, chunk, constrained, options, hold_out), chunks
            )
            outcomes = [o for part in parts for o in part]

    evaluated = [o for o in outcomes if not o.skipped]
    if not evaluated:
        raise NoFeasibleGridPoint(f"all {len(rhos)} grid points were singular")
    best = min(evaluated, key=lambda o: (o.objective, abs(o.rho), o.rho))

    blocks = assemble(sample, w, best.rho, options, hold_out)
    beta_c, beta_r = best.beta[:N_COEF], best.beta[N_COEF:]
    whitened = blocks.center_residuals(beta_c)
    if blocks.basis is None:
        residuals_c = whitened
    else:
        # structural residuals with the part explained by held-out centers removed
        residuals_c = (blocks.basis @ whitened)[hold_out.train_idx]
    residuals_r = sample.yr - blocks.X @ beta_r
    profile = tuple(
        GridPoint(rho=o.rho, objective=o.objective, skipped=o.skipped, n_active=o.n_active)
        for o in outcomes
    )
    logger.debug("%s selected rho=%.4f objective=%.6g", kind.value, best.rho, best.objective)
    return FitResult(
        model=kind,
        rho=best.rho,
        beta_c=tuple(float(v) for v in beta_c),
        beta_r=tuple(float(v) for v in beta_r),
        objective=float(best.objective),
        sigma2_c=float(whitened @ whitened / sample.n),
        sigma2_r=float(np.mean(residuals_r**2)),
        residuals_c=residuals_c,
        residuals_r=residuals_r,
        grid_profile=profile,
        n_active=best.n_active,
    )


def fit_icsm(
    sample: IntervalSample,
    w: WeightMatrix,
    grid: RhoGrid = RhoGrid(),
    options: SolverOptions = SolverOptions(),
    jobs: int = 1,
    hold_out: Optional[HoldOut] = None,
) -> FitResult:
    """
    Constrained spatial model: minimize the residual sum of squares over the
    rho grid, solving the constrained problem at each point.

    Ties in the objective go to the smaller |rho|, then the smaller rho.
    Singular grid points are skipped and recorded in grid_profile.

    With a hold-out, w is the full-sample matrix and sample holds the fitted
    units only; W is never re-normalized on the subset.

    Raises:
        UnnormalizedWeights: If w is not row-normalized
    """
    _require_row_normalized(w)
    return _grid_search(sample, w, grid, ModelKind.ICSM, options, jobs, hold_out)


def fit_icm(sample: IntervalSample, options: SolverOptions = SolverOptions()) -> FitResult:
    """Constrained model without spatial lag (rho fixed at 0)."""
    return _grid_search(
        sample, zero_weights(sample.n), RhoGrid.single(0.0), ModelKind.ICM, options, 1
    )


def fit_ism(
    sample: IntervalSample,
    w: WeightMatrix,
    grid: RhoGrid = RhoGrid(),
    options: SolverOptions = SolverOptions(),
    jobs: int = 1,
    hold_out: Optional[HoldOut] = None,
) -> FitResult:
    """Spatial model without constraints; same grid search, hold-out handling and tie-breaking as ICSM."""
    _require_row_normalized(w)
    return _grid_search(sample, w, grid, ModelKind.ISM, options, jobs, hold_out)


def fit(
    kind: ModelKind,
    sample: IntervalSample,
    w: Optional[WeightMatrix],
    grid: RhoGrid = RhoGrid(),
    options: SolverOptions = SolverOptions(),
    jobs: int = 1,
    hold_out: Optional[HoldOut] = None,
) -> FitResult:
    """Dispatch on the model kind. ICM ignores w and the hold-out (A = I)."""
    kind = ModelKind(kind)
    if kind is ModelKind.ICM:
        return fit_icm(sample, options)
    if w is None:
        raise ShapeMismatch(f"{kind.value} needs a weight matrix")
    if kind is ModelKind.ICSM:
        return fit_icsm(sample, w, grid, options, jobs, hold_out)
    return fit_ism(sample, w, grid, options, jobs, hold_out)


def fitted_intervals(
    fit: FitResult,
    sample: IntervalSample,
    w: Optional[WeightMatrix] = None,
    options: SolverOptions = SolverOptions(),
    hold_out: Optional[HoldOut] = None,
) -> FittedIntervals:
    """
    In-sample fitted intervals: centers (I - rho W)^-1 X beta_c, radii X beta_r.

    With a hold-out the centers are the fitted-unit rows of the full-sample
    reduced form. Negative radii (possible only for ISM) are kept and
    flagged, never swapped.
    """
    if fit.n and fit.n != sample.n:
        raise ShapeMismatch(f"fit has {fit.n} units but the sample has {sample.n}")
    X = sample.design_matrix()
    if fit.rho == 0.0:
        centers = X @ np.asarray(fit.beta_c)
    else:
        if w is None:
            raise ShapeMismatch("a spatial fit needs the weight matrix it was fitted with")
        _check_sizes(sample, w, hold_out)
        _, Ainv, _ = spatial_filter(w, fit.rho, options)
        if hold_out is None:
            centers = Ainv @ (X @ np.asarray(fit.beta_c))
        else:
            centers = (Ainv @ (hold_out.full_design(X) @ np.asarray(fit.beta_c)))[hold_out.train_idx]
    return FittedIntervals(centers=centers, radii=X @ np.asarray(fit.beta_r))
