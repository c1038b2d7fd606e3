"""
Monte-Carlo study of the interval models.

Each replication draws covariates, coefficients and noise, builds interval
responses through the SAR reduced form, splits units into training and test
sets, fits ICSM, ICM and ISM on the training units and scores their test
predictions. Randomness is derived from (seed, rep, stream, attempt) so a
replication produces the same numbers regardless of worker scheduling.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .config import DEFAULT_SEED
from .errors import FormatError, IntervalSarError, TooManyRejections
from .estimators import RhoGrid, fit_icm, fit_icsm, fit_ism, spatial_filter
from .intervals import IntervalSample
from .models import ModelKind, PredictionMethod
from .predictor import SamplePartition, evaluate, predict_intervals
from .weights import GeoPoint, WeightMatrix, block, inverse_distance, rook, row_normalize

logger = logging.getLogger(__name__)

MAX_REJECTIONS = 1000
METRICS = ("rmse_l", "rmse_u", "mse_l", "mse_u", "ar", "n_d", "mse_c", "rho_hat")
MODEL_ORDER = (ModelKind.ICSM, ModelKind.ICM, ModelKind.ISM)
PREDICTION_METHOD = {
    ModelKind.ICSM: PredictionMethod.BP,
    ModelKind.ICM: PredictionMethod.TC,
    ModelKind.ISM: PredictionMethod.BP,
}

# stream ids for SeedSequence([seed, rep, stream, attempt])
_COVARIATES, _COEFFICIENTS, _CENTER_NOISE, _RADIUS_NOISE, _SPLIT = range(5)


def _rng(seed: int, rep: int, stream: int, attempt: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, rep, stream, attempt]))


@dataclass(frozen=True)
class Distribution:
    """
    A scalar distribution.

    kind "normal" uses (mean, variance), "uniform" uses (low, high) and
    "constant" uses value.
    """

    kind: str
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in ("normal", "uniform", "constant"):
            raise FormatError(f"unknown distribution kind '{self.kind}'")
        if self.kind == "normal" and self.b < 0:
            raise FormatError(f"normal variance must be nonnegative, got {self.b}")
        if self.kind == "uniform" and self.b < self.a:
            raise FormatError(f"uniform bounds reversed: ({self.a}, {self.b})")

    @classmethod
    def normal(cls, mean: float, variance: float) -> "Distribution":
        return cls("normal", mean, variance)

    @classmethod
    def uniform(cls, low: float, high: float) -> "Distribution":
        return cls("uniform", low, high)

    @classmethod
    def constant(cls, value: float) -> "Distribution":
        return cls("constant", value, value)

    def sample(self, rng: np.random.Generator, size: Optional[int] = None):
        if self.kind == "normal":
            return rng.normal(self.a, math.sqrt(self.b), size)
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, size)
        return np.full(size, self.a) if size is not None else self.a

    def label(self) -> str:
        if self.kind == "normal":
            return f"N({self.a:g},{self.b:g})"
        if self.kind == "uniform":
            return f"U({self.a:g},{self.b:g})"
        return f"{self.a:g}"

    def to_dict(self) -> dict:
        if self.kind == "normal":
            return {"kind": "normal", "mean": self.a, "variance": self.b}
        if self.kind == "uniform":
            return {"kind": "uniform", "low": self.a, "high": self.b}
        return {"kind": "constant", "value": self.a}

    @classmethod
    def from_dict(cls, data) -> "Distribution":
        if isinstance(data, (int, float)):
            return cls.constant(float(data))
        try:
            kind = data["kind"]
            if kind == "normal":
                return cls.normal(float(data.get("mean", 0.0)), float(data["variance"]))
            if kind == "uniform":
                return cls.uniform(float(data["low"]), float(data["high"]))
            if kind == "constant":
                return cls.constant(float(data["value"]))
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"malformed distribution {data!r}: {e}") from e
        raise FormatError(f"unknown distribution kind '{kind}'")


@dataclass(frozen=True)
class LatticeSpec:
    """rook: a rows x b cols lattice; block: a districts x b members."""

    kind: str
    a: int
    b: int

    def __post_init__(self):
        if self.kind not in ("rook", "block"):
            raise FormatError(f"unknown lattice kind '{self.kind}'")

    @property
    def n(self) -> int:
        return self.a * self.b

    def build(self) -> WeightMatrix:
        """Row-normalized weights for this lattice."""
        if self.kind == "rook":
            return row_normalize(rook(self.a, self.b))
        return block(self.a, self.b)

    def label(self) -> str:
        return f"{self.kind}_{self.a}x{self.b}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "size": [self.a, self.b]}

    @classmethod
    def from_dict(cls, data: dict) -> "LatticeSpec":
        try:
            a, b = data["size"]
            return cls(str(data["kind"]), int(a), int(b))
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"malformed lattice {data!r}: {e}") from e


@dataclass(frozen=True)
class CoefficientSpec:
    """Distributions of the six coefficients (intercept, x center, x radius) per equation."""

    c0: Distribution = Distribution.constant(0.0)
    c1: Distribution = Distribution.uniform(-2.5, -2.0)
    c2: Distribution = Distribution.constant(1.0)
    r0: Distribution = Distribution.constant(0.0)
    r1: Distribution = Distribution.constant(0.1)
    r2: Distribution = Distribution.uniform(2.5, 5.0)

    _FIELDS = ("c0", "c1", "c2", "r0", "r1", "r2")

    def draw(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        values = [float(getattr(self, name).sample(rng)) for name in self._FIELDS]
        return np.array(values[:3]), np.array(values[3:])

    def to_dict(self) -> dict:
        return {name: getattr(self, name).to_dict() for name in self._FIELDS}

    @classmethod
    def from_dict(cls, data: dict) -> "CoefficientSpec":
        defaults = cls()
        return cls(
            **{
                name: Distribution.from_dict(data[name]) if name in data else getattr(defaults, name)
                for name in cls._FIELDS
            }
        )


@dataclass(frozen=True)
class ScenarioConfig:
    """
    One simulation scenario.

    Attributes:
        lattice: Spatial layout and weight type
        rho_true: Spatial lag used to generate centers
        noise_c: Center noise distribution
        noise_r: Radius noise distribution
        x_c_dist: Covariate center distribution
        x_r_dist: Covariate radius distribution
        beta: Coefficient distributions, drawn once per replication
        n_reps: Number of replications
        train_fraction: Share of units used for fitting
        seed: Base seed
        grid: rho grid for ICSM and ISM
        name: Label used for report files
    """

    lattice: LatticeSpec
    rho_true: float
    noise_c: Distribution = Distribution.normal(0.0, 11.0)
    noise_r: Distribution = Distribution.normal(0.0, 5.0)
    x_c_dist: Distribution = Distribution.uniform(0.0, 150.0)
    x_r_dist: Distribution = Distribution.uniform(5.0, 8.0)
    beta: CoefficientSpec = field(default_factory=CoefficientSpec)
    n_reps: int = 75
    train_fraction: float = 0.9
    seed: int = DEFAULT_SEED
    grid: RhoGrid = field(default_factory=RhoGrid)
    name: str = ""

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise FormatError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.n_reps < 1:
            raise FormatError(f"n_reps must be >= 1, got {self.n_reps}")
        if not self.name:
            label = f"{self.lattice.label()}_rho{self.rho_true:g}_{self.noise_c.label()}"
            object.__setattr__(self, "name", label)

    def with_overrides(
        self, n_reps: Optional[int] = None, seed: Optional[int] = None, grid: Optional[RhoGrid] = None
    ) -> "ScenarioConfig":
        return replace(
            self,
            n_reps=self.n_reps if n_reps is None else n_reps,
            seed=self.seed if seed is None else seed,
            grid=self.grid if grid is None else grid,
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lattice": self.lattice.to_dict(),
            "rho_true": self.rho_true,
            "noise_c": self.noise_c.to_dict(),
            "noise_r": self.noise_r.to_dict(),
            "x_c_dist": self.x_c_dist.to_dict(),
            "x_r_dist": self.x_r_dist.to_dict(),
            "beta": self.beta.to_dict(),
            "n_reps": self.n_reps,
            "train_fraction": self.train_fraction,
            "seed": self.seed,
            "grid": self.grid.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        """
        Build a scenario from a JSON object; missing fields take defaults.

        Raises:
            FormatError: On missing lattice/rho_true or malformed values
        """
        if not isinstance(data, dict):
            raise FormatError("scenario must be a JSON object")
        try:
            kwargs = {
                "lattice": LatticeSpec.from_dict(data["lattice"]),
                "rho_true": float(data["rho_true"]),
            }
        except KeyError as e:
            raise FormatError(f"scenario is missing required field {e}") from e
        except (TypeError, ValueError) as e:
            raise FormatError(f"malformed scenario: {e}") from e
        for name in ("noise_c", "noise_r", "x_c_dist", "x_r_dist"):
            if name in data:
                kwargs[name] = Distribution.from_dict(data[name])
        if "beta" in data:
            kwargs["beta"] = CoefficientSpec.from_dict(data["beta"])
        if "grid" in data:
            try:
                kwargs["grid"] = RhoGrid.from_dict(data["grid"])
            except (TypeError, ValueError) as e:
                raise FormatError(f"malformed grid: {e}") from e
        try:
            for name, cast in (("n_reps", int), ("train_fraction", float), ("seed", int), ("name", str)):
                if name in data:
                    kwargs[name] = cast(data[name])
        except (TypeError, ValueError) as e:
            raise FormatError(f"malformed scenario: {e}") from e
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class GeneratedData:
    """One replication's sample with the parameters that produced it."""

    sample: IntervalSample
    w: WeightMatrix
    rho: float
    beta_c: np.ndarray
    beta_r: np.ndarray
    rejections: int = 0


def generate(config: ScenarioConfig, rep: int) -> GeneratedData:
    """
    Draw one replication.

    yc = (I - rho W)^-1 (X beta_c + e_c) and yr = X beta_r + e_r with
    X = [1, xc, xr]. Radius noise is redrawn until every yr is positive.

    Raises:
        TooManyRejections: If no valid radius noise is found in MAX_REJECTIONS draws
    """
    w = config.lattice.build()
    n = w.n
    cov_rng = _rng(config.seed, rep, _COVARIATES)
    xc = np.asarray(config.x_c_dist.sample(cov_rng, n), dtype=float)
    xr = np.asarray(config.x_r_dist.sample(cov_rng, n), dtype=float)
    if np.any(xr < 0):
        raise IntervalSarError("covariate radius distribution produced negative values")
    beta_c, beta_r = config.beta.draw(_rng(config.seed, rep, _COEFFICIENTS))
    X = np.column_stack([np.ones(n), xc, xr])

    noise_c = np.asarray(config.noise_c.sample(_rng(config.seed, rep, _CENTER_NOISE), n), dtype=float)
    _, Ainv, _ = spatial_filter(w, config.rho_true)
    yc = Ainv @ (X @ beta_c + noise_c)

    radius_trend = X @ beta_r
    for attempt in range(MAX_REJECTIONS + 1):
        noise_r = np.asarray(
            config.noise_r.sample(_rng(config.seed, rep, _RADIUS_NOISE, attempt), n), dtype=float
        )
        yr = radius_trend + noise_r
        if np.all(yr > 0):
            break
        logger.debug("rep %d: radius draw %d had nonpositive values, redrawing", rep, attempt)
    else:
        raise TooManyRejections(f"rep {rep}: no positive radius draw in {MAX_REJECTIONS} redraws")
    if attempt:
        logger.info("rep %d: accepted radius draw after %d rejections", rep, attempt)

    sample = IntervalSample.from_center_range(yc, yr, xc, xr)
    return GeneratedData(sample=sample, w=w, rho=config.rho_true, beta_c=beta_c, beta_r=beta_r, rejections=attempt)


@dataclass(frozen=True)
class RepRecord:
    """Metrics of one replication, or the error that made it fail."""

    rep: int
    metrics: Dict[str, Dict[str, float]] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def run_replication(config: ScenarioConfig, rep: int) -> RepRecord:
    """Generate, split, fit the three models on training units and score test predictions."""
    try:
        data = generate(config, rep)
        part = SamplePartition.random(
            data.sample.n, config.train_fraction, _rng(config.seed, rep, _SPLIT), w_full=data.w
        )
        train = data.sample.subset(part.train_idx)
        hold_out = part.hold_out(data.sample.design_matrix())
        fits = {
            ModelKind.ICSM: fit_icsm(train, data.w, config.grid, hold_out=hold_out),
            ModelKind.ICM: fit_icm(train),
            ModelKind.ISM: fit_ism(train, data.w, config.grid, hold_out=hold_out),
        }
        truth = [data.sample.y[i] for i in part.test_idx]
        metrics = {}
        for kind in MODEL_ORDER:
            pred = predict_intervals(fits[kind], part, data.sample, PREDICTION_METHOD[kind])
            scores = evaluate(pred, truth).to_dict()
            scores["mse_l"] = scores["rmse_l"] ** 2
            scores["mse_u"] = scores["rmse_u"] ** 2
            scores["rho_hat"] = fits[kind].rho
            metrics[kind.value] = {name: float(scores[name]) for name in METRICS}
        return RepRecord(rep=rep, metrics=metrics)
    except IntervalSarError as e:
        logger.warning("%s rep %d failed: %s: %s", config.name, rep, type(e).__name__, e)
        return RepRecord(rep=rep, error=f"{type(e).__name__}: {e}")


def _run_indexed(args) -> RepRecord:
    config, rep = args
    return run_replication(config, rep)


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    """Per-replication records of one scenario and their aggregates."""

    config: ScenarioConfig
    records: Tuple[RepRecord, ...]

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.records if r.failed)

    @property
    def succeeded(self) -> List[RepRecord]:
        return [r for r in self.records if not r.failed]

    def values(self, model: str, metric: str) -> np.ndarray:
        """Per-rep values of one metric, in rep order, failed reps excluded."""
        model = ModelKind(model).value
        return np.array([r.metrics[model][metric] for r in self.succeeded], dtype=float)

    def mean(self, model: str, metric: str) -> float:
        vals = self.values(model, metric)
        return float(np.mean(vals)) if vals.size else float("nan")

    def sd(self, model: str, metric: str) -> float:
        vals = self.values(model, metric)
        return float(np.std(vals, ddof=1)) if vals.size > 1 else float("nan")

    def summary_frame(self) -> pd.DataFrame:
        """One row per model and metric: mean, sd (ddof=1), retained and failed reps."""
        rows = []
        n_ok = len(self.succeeded)
        for kind in MODEL_ORDER:
            for metric in METRICS:
                rows.append(
                    {
                        "scenario": self.config.name,
                        "model": kind.value,
                        "metric": metric,
                        "mean": self.mean(kind.value, metric),
                        "sd": self.sd(kind.value, metric),
                        "n_reps": n_ok,
                        "n_failed": self.n_failed,
                    }
                )
        return pd.DataFrame(rows)

    def raw_frame(self) -> pd.DataFrame:
        """One row per replication and model; failed reps carry their error."""
        rows = []
        for record in self.records:
            if record.failed:
                rows.append({"rep": record.rep, "model": "", "error": record.error})
                continue
            for kind in MODEL_ORDER:
                rows.append({"rep": record.rep, "model": kind.value, **record.metrics[kind.value], "error": ""})
        return pd.DataFrame(rows, columns=["rep", "model", *METRICS, "error"])

    def to_text(self) -> str:
        """Aligned table: one row per metric, mean (sd) per model."""
        header = f"{'metric':<8}" + "".join(f"{kind.value:>24}" for kind in MODEL_ORDER)
        lines = [
            f"scenario: {self.config.name}",
            f"n = {self.config.lattice.n}, rho = {self.config.rho_true:g}, "
            f"noise_c = {self.config.noise_c.label()}, noise_r = {self.config.noise_r.label()}",
            f"replications: {len(self.succeeded)} retained, {self.n_failed} failed",
            "",
            header,
            "-" * len(header),
        ]
        for metric in METRICS:
            cells = "".join(
                f"{self.mean(kind.value, metric):>13.4f} ({self.sd(kind.value, metric):>7.4f})"
                for kind in MODEL_ORDER
            )
            lines.append(f"{metric:<8}{cells}")
        return "\n".join(lines) + "\n"


def run_scenario(config: ScenarioConfig, jobs: int = 1) -> ExperimentReport:
    """
    Run all replications of a scenario.

    Replications are spread over worker processes when jobs > 1; records are
    kept in rep order, so the report does not depend on jobs.
    """
    reps = range(config.n_reps)
    logger.info("running %s: %d reps, jobs=%d", config.name, config.n_reps, jobs)
    if jobs > 1 and config.n_reps > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, config.n_reps)) as ex:
            records = list(ex.map(_run_indexed, [(config, rep) for rep in reps]))
    else:
        records = [run_replication(config, rep) for rep in reps]
    report = ExperimentReport(config=config, records=tuple(records))
    if report.n_failed:
        logger.warning("%s: %d of %d reps failed", config.name, report.n_failed, config.n_reps)
    return report


STANDARD_RHOS = (0.0, 0.4, 0.8)
STANDARD_LATTICES = {
    "rook": ((10, 12), (12, 20), (20, 25)),
    "block": ((20, 6), (20, 12), (25, 20)),
}
STANDARD_CENTER_VARIANCES = (11.0, 18.0)


def paper_scenario_matrix(base_seed: int = DEFAULT_SEED, n_reps: int = 75) -> List[ScenarioConfig]:
    """
    The 36 standard scenarios: rho x weight type x size x center noise.

    Scenario i gets seed base_seed + i.
    """
    scenarios = []
    for rho in STANDARD_RHOS:
        for kind, sizes in STANDARD_LATTICES.items():
            for a, b in sizes:
                for variance in STANDARD_CENTER_VARIANCES:
                    scenarios.append(
                        ScenarioConfig(
                            lattice=LatticeSpec(kind, a, b),
                            rho_true=rho,
                            noise_c=Distribution.normal(0.0, variance),
                            n_reps=n_reps,
                            seed=base_seed + len(scenarios),
                        )
                    )
    return scenarios


GEO_REGION = {"lon": (100.0, 120.0), "lat": (22.0, 42.0)}


@dataclass(frozen=True, eq=False)
class GeoDataset:
    """A synthetic areal dataset with coordinates and a train/test split."""

    ids: Tuple[str, ...]
    coords: Tuple[GeoPoint, ...]
    sample: IntervalSample
    w: WeightMatrix
    partition: SamplePartition
    rho: float
    beta_c: np.ndarray
    beta_r: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        split = np.full(self.sample.n, "train", dtype=object)
        split[self.partition.test_idx] = "test"
        y_lower = np.array([iv.lower for iv in self.sample.y])
        y_upper = np.array([iv.upper for iv in self.sample.y])
        x_lower = np.array([iv.lower for iv in self.sample.x])
        x_upper = np.array([iv.upper for iv in self.sample.x])
        return pd.DataFrame(
            {
                "id": list(self.ids),
                "x_lower": x_lower,
                "x_upper": x_upper,
                "y_lower": y_lower,
                "y_upper": y_upper,
                "lon": [p.longitude for p in self.coords],
                "lat": [p.latitude for p in self.coords],
                "split": split,
            }
        )


def make_geo_dataset(
    n_units: int = 80,
    seed: int = DEFAULT_SEED,
    rho: float = 0.5,
    k: int = 4,
    noise_c: Distribution = Distribution.normal(0.0, 1.0),
    noise_r: Distribution = Distribution.normal(0.0, 0.25),
    train_fraction: float = 0.9,
) -> GeoDataset:
    """
    City-like stations with interval responses from a SAR process on
    row-normalized k-nearest inverse-distance weights.

    Covariates resemble daily temperature ranges; responses resemble
    precipitation ranges with center coefficients (2.0, 0.3, 0.5) and radius
    coefficients (1.0, 0.05, 0.4).
    """
    if n_units < 4:
        raise IntervalSarError(f"n_units must be >= 4, got {n_units}")
    rng = _rng(seed, 0, _COVARIATES)
    lon = rng.uniform(*GEO_REGION["lon"], n_units)
    lat = rng.uniform(*GEO_REGION["lat"], n_units)
    coords = tuple(GeoPoint(float(a), float(b)) for a, b in zip(lon, lat))
    w = row_normalize(inverse_distance(coords, k, math.inf))

    xc = rng.uniform(5.0, 25.0, n_units)
    xr = rng.uniform(2.0, 6.0, n_units)
    X = np.column_stack([np.ones(n_units), xc, xr])
    beta_c = np.array([2.0, 0.3, 0.5])
    beta_r = np.array([1.0, 0.05, 0.4])

    _, Ainv, _ = spatial_filter(w, rho)
    yc = Ainv @ (X @ beta_c + noise_c.sample(_rng(seed, 0, _CENTER_NOISE), n_units))
    radius_trend = X @ beta_r
    for attempt in range(MAX_REJECTIONS + 1):
        yr = radius_trend + noise_r.sample(_rng(seed, 0, _RADIUS_NOISE, attempt), n_units)
        if np.all(yr > 0):
            break
    else:
        raise TooManyRejections(f"no positive radius draw in {MAX_REJECTIONS} redraws")

    sample = IntervalSample.from_center_range(yc, yr, xc, xr)
    partition = SamplePartition.random(n_units, train_fraction, _rng(seed, 0, _SPLIT), w_full=w)
    width = len(str(n_units))
    return GeoDataset(
        ids=tuple(f"S{i:0{width}d}" for i in range(n_units)),
        coords=coords,
        sample=sample,
        w=w,
        partition=partition,
        rho=rho,
        beta_c=beta_c,
        beta_r=beta_r,
    )
