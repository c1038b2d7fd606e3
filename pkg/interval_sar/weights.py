"""
Spatial weight matrices and Moran's I diagnostics.

Builders (libpysal underneath, scipy CSR inside WeightMatrix):
- rook(rows, cols): lattice cells sharing an edge
- block(districts, members): equal weights inside each district
- inverse_distance(coords, k, d0): 1/d for the k nearest units within d0 km

Diagnostics (esda.Moran underneath):
- morans_i / morans_i_test: global autocorrelation with a permutation test
- select_k_d0: choose (k, d0) for inverse-distance weights by maximal Moran's I
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import esda
import libpysal
import numpy as np
from scipy import sparse

from .config import DEFAULT_PERMUTATIONS
from .errors import (ConstantVector, DegenerateBlock, DimensionMismatch,
                     DuplicateCoordinates, EmptyWeights, IntervalSarError,
                     ZeroDimension)

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
ROW_SUM_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """
    Immutable n x n spatial weights with a zero diagonal.

    Attributes:
        matrix: CSR matrix of nonnegative weights
        row_normalized: True when every nonzero row sums to one
    """

    matrix: sparse.csr_matrix
    row_normalized: bool = False

    def __post_init__(self):
        m = sparse.csr_matrix(self.matrix, dtype=float).copy()
        m.eliminate_zeros()
        m.sort_indices()
        if m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"weight matrix must be square, got {m.shape}")
        if m.nnz and np.min(m.data) < 0:
            raise IntervalSarError("spatial weights must be nonnegative")
        if np.any(m.diagonal() != 0):
            raise IntervalSarError("spatial weights must have a zero diagonal")
        if self.row_normalized:
            sums = np.asarray(m.sum(axis=1)).ravel()
            nonzero = sums != 0
            if np.any(np.abs(sums[nonzero] - 1.0) > ROW_SUM_TOL):
                raise IntervalSarError("row_normalized flag set but rows do not sum to 1")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_pysal(cls, w: libpysal.weights.W) -> "WeightMatrix":
        """Weights of a libpysal W in its id order; flagged normalized under the 'R' transform."""
        return cls(w.sparse.tocsr(), row_normalized=str(w.transform).upper() == "R")

    def to_pysal(self) -> libpysal.weights.W:
        """A fresh libpysal W over ids 0..n-1 with the same weights."""
        m = self.matrix
        neighbors, weights = {}, {}
        for i in range(self.n):
            lo, hi = m.indptr[i], m.indptr[i + 1]
            neighbors[i] = m.indices[lo:hi].tolist()
            weights[i] = m.data[lo:hi].tolist()
        return libpysal.weights.W(neighbors, weights, id_order=list(range(self.n)), silence_warnings=True)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def s0(self) -> float:
        """Sum of all weights."""
        return float(self.matrix.sum())

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def submatrix(self, idx) -> "WeightMatrix":
        """Rows and columns idx, without renormalizing."""
        idx = np.asarray(idx, dtype=int)
        return WeightMatrix(self.matrix[idx][:, idx])

    def triplets(self) -> List[Tuple[int, int, float]]:
        coo = self.matrix.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))


@dataclass(frozen=True)
class GeoPoint:
    """A location in decimal degrees."""

    longitude: float
    latitude: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise IntervalSarError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise IntervalSarError(f"longitude {self.longitude} outside [-180, 180]")


@dataclass(frozen=True)
class MoranResult:
    """
    Moran's I with a permutation p-value.

    Attributes:
        statistic: Observed Moran's I
        p_value: Permutation p-value for the chosen alternative
        n_permutations: Number of random permutations drawn
        expected: Analytical expectation -1/(n-1) under no autocorrelation
        perm_mean: Mean of the permuted statistics
        perm_sd: Standard deviation of the permuted statistics
        z_score: (statistic - perm_mean) / perm_sd
        alternative: "greater", "less" or "two-sided"
        z_norm: z-value under the normality assumption
        p_norm: Two-sided p-value under the normality assumption
    """

    statistic: float
    p_value: float
    n_permutations: int
    expected: float
    perm_mean: float
    perm_sd: float
    z_score: float
    alternative: str = "greater"
    z_norm: float = float("nan")
    p_norm: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n_permutations": self.n_permutations,
            "expected": self.expected,
            "perm_mean": self.perm_mean,
            "perm_sd": self.perm_sd,
            "z_score": self.z_score,
            "alternative": self.alternative,
            "z_norm": self.z_norm,
            "p_norm": self.p_norm,
        }


@dataclass(frozen=True)
class WeightSelection:
    """
    Outcome of the (k, d0) search.

    Attributes:
        k: Selected number of neighbors
        d0: Selected distance threshold in km
        moran: Moran's I at the selected pair
        per_k: Best (k, d0, moran) for every k that was searched
    """

    k: int
    d0: float
    moran: float
    per_k: Tuple[Tuple[int, float, float], ...]


def rook(rows: int, cols: int) -> WeightMatrix:
    """
    Binary rook contiguity on a rows x cols lattice, cells in row-major order.

    Not row-normalized.
    """
    if rows < 1 or cols < 1:
        raise ZeroDimension(f"lattice must be at least 1x1, got {rows}x{cols}")
    return WeightMatrix.from_pysal(libpysal.weights.lat2W(rows, cols, rook=True, silence_warnings=True))


def block(districts: int, members: int) -> WeightMatrix:
    """
    Block-diagonal weights: 1/(members-1) between distinct units of a district.

    Rows already sum to one, so the result is flagged row-normalized.
    """
    if members < 2:
        raise DegenerateBlock(f"block weights need members >= 2, got {members}")
    if districts < 1:
        raise ZeroDimension(f"need at least one district, got {districts}")
    regimes = np.repeat(np.arange(districts), members)
    w = libpysal.weights.block_weights(regimes, ids=list(range(regimes.size)), silence_warnings=True)
    w.transform = "r"
    return WeightMatrix.from_pysal(w)


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance on a sphere of radius 6371 km."""
    return float(
        _haversine(
            np.array([a.longitude]), np.array([a.latitude]),
            np.array([b.longitude]), np.array([b.latitude]),
        )[0]
    )


def _haversine(lon1, lat1, lon2, lat2) -> np.ndarray:
    lon1, lat1, lon2, lat2 = (np.radians(v) for v in (lon1, lat1, lon2, lat2))
    hav = (
        np.sin((lat2 - lat1) / 2.0) ** 2
        + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    )
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(hav, 0.0, 1.0)))


def distance_matrix(coords: Sequence[GeoPoint]) -> np.ndarray:
    """Pairwise great-circle distances in km."""
    lon = np.array([p.longitude for p in coords], dtype=float)
    lat = np.array([p.latitude for p in coords], dtype=float)
    dist = _haversine(lon[:, None], lat[:, None], lon[None, :], lat[None, :])
    np.fill_diagonal(dist, 0.0)
    return dist


def _kth_neighbor_distances(dist: np.ndarray, k: int) -> np.ndarray:
    off_diag = dist + np.diag(np.full(dist.shape[0], np.inf))
    k = min(k, dist.shape[0] - 1)
    return np.sort(off_diag, axis=1)[:, k - 1]


def _inverse_distance_from(dist: np.ndarray, k: int, d0: float) -> WeightMatrix:
    n = dist.shape[0]
    kth = _kth_neighbor_distances(dist, k)
    # ties at the k-th distance are all included
    mask = (dist <= kth[:, None]) & (dist <= d0)
    np.fill_diagonal(mask, False)
    neighbors = {i: np.flatnonzero(mask[i]).tolist() for i in range(n)}
    weights = {i: (1.0 / dist[i, nbrs]).tolist() for i, nbrs in neighbors.items()}
    w = libpysal.weights.W(neighbors, weights, id_order=list(range(n)), silence_warnings=True)
    return WeightMatrix.from_pysal(w)


def _check_distances(dist: np.ndarray) -> None:
    n = dist.shape[0]
    off_diag = dist[~np.eye(n, dtype=bool)]
    if np.any(off_diag == 0.0):
        raise DuplicateCoordinates("two distinct units share identical coordinates")


def inverse_distance(coords: Sequence[GeoPoint], k: int, d0: float) -> WeightMatrix:
    """
    Inverse-distance weights restricted to the k nearest neighbors within d0 km.

    w_ij = 1/d_ij when j is among the k nearest units of i (ties at the k-th
    distance included) and d_ij <= d0, else 0. k is capped at n-1. The result
    may be asymmetric and is not row-normalized.
    """
    if len(coords) < 2:
        raise ZeroDimension("inverse-distance weights need at least two units")
    if k < 1:
        raise IntervalSarError(f"k must be >= 1, got {k}")
    if not d0 > 0:
        raise IntervalSarError(f"d0 must be positive, got {d0}")
    dist = distance_matrix(coords)
    _check_distances(dist)
    return _inverse_distance_from(dist, k, d0)


def row_normalize(w: WeightMatrix) -> WeightMatrix:
    """Divide each nonzero row by its sum; zero rows stay zero."""
    wp = w.to_pysal()
    wp.transform = "r"
    return WeightMatrix.from_pysal(wp)


def _centered(w: WeightMatrix, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size != w.n:
        raise DimensionMismatch(f"vector of length {z.size} does not match n = {w.n}")
    zc = z - z.mean()
    scale = max(1.0, float(np.max(np.abs(z)))) if z.size else 1.0
    if np.ptp(z) == 0 or float(zc @ zc) <= z.size * (1e-12 * scale) ** 2:
        raise ConstantVector("Moran's I is undefined for a constant vector")
    return zc


def _moran(wp: libpysal.weights.W, z: np.ndarray) -> esda.Moran:
    # "O" keeps the weights as given; esda would row-standardize by default
    return esda.Moran(z, wp, transformation="O", permutations=0)


def _checked(w: WeightMatrix, z) -> np.ndarray:
    _centered(w, z)
    if w.s0 <= 0:
        raise EmptyWeights("Moran's I needs at least one positive weight")
    return np.asarray(z, dtype=float)


def morans_i(w: WeightMatrix, z) -> float:
    """
    Global Moran's I = (n / S0) * (z~' W z~) / (z~' z~), z~ = z - mean(z).
    """
    return float(_moran(w.to_pysal(), _checked(w, z)).I)


def moran_scatter(w: WeightMatrix, z) -> Tuple[np.ndarray, np.ndarray]:
    """Centered values and their spatial lag, the axes of a Moran scatter plot."""
    zc = _centered(w, z)
    return zc, np.asarray(libpysal.weights.lag_spatial(w.to_pysal(), zc))


def _permuted_statistics(w: WeightMatrix, z: np.ndarray, seed: int, indices) -> np.ndarray:
    # esda.Moran sets the transform on the W it gets, so every worker owns one
    wp = w.to_pysal()
    out = np.empty(len(indices))
    for pos, perm_index in enumerate(indices):
        # one stream per permutation keeps results independent of chunking
        rng = np.random.default_rng([seed, int(perm_index)])
        out[pos] = _moran(wp, rng.permutation(z)).I
    return out


def morans_i_test(
    w: WeightMatrix,
    z,
    n_perm: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
    alternative: str = "greater",
    jobs: int = 1,
) -> MoranResult:
    """
    Moran's I with a conditional permutation p-value.

    The one-sided "greater" p-value is (1 + #{I_perm >= I}) / (1 + n_perm);
    "less" mirrors it and "two-sided" doubles the smaller tail, capped at 1.
    Each permutation draws from its own (seed, index) stream, so the result
    does not depend on jobs. The observed and permuted statistics and the
    normal approximation come from esda.Moran.
    """
    if n_perm < 1:
        raise IntervalSarError(f"n_perm must be >= 1, got {n_perm}")
    if alternative not in ("greater", "less", "two-sided"):
        raise IntervalSarError(f"unknown alternative '{alternative}'")
    z = _checked(w, z)
    observed = _moran(w.to_pysal(), z)
    statistic = float(observed.I)
    logger.debug("permutation test: n=%d n_perm=%d seed=%d jobs=%d", w.n, n_perm, seed, jobs)

    indices = np.arange(n_perm)
    if jobs > 1 and n_perm > jobs:
        chunks = np.array_split(indices, jobs)
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(lambda c: _permuted_statistics(w, z, seed, c), chunks))
        permuted = np.concatenate(parts)
    else:
        permuted = _permuted_statistics(w, z, seed, indices)

    upper = (1 + np.count_nonzero(permuted >= statistic)) / (1 + n_perm)
    lower = (1 + np.count_nonzero(permuted <= statistic)) / (1 + n_perm)
    if alternative == "greater":
        p_value = upper
    elif alternative == "less":
        p_value = lower
    else:
        p_value = min(1.0, 2.0 * min(upper, lower))

    perm_mean = float(np.mean(permuted))
    perm_sd = float(np.std(permuted, ddof=1)) if n_perm > 1 else float("nan")
    z_score = (statistic - perm_mean) / perm_sd if perm_sd and math.isfinite(perm_sd) else float("nan")
    return MoranResult(
        statistic=statistic,
        p_value=float(p_value),
        n_permutations=n_perm,
        expected=float(observed.EI),
        perm_mean=perm_mean,
        perm_sd=perm_sd,
        z_score=float(z_score),
        alternative=alternative,
        z_norm=float(observed.z_norm),
        p_norm=float(observed.p_norm),
    )


def candidate_thresholds(dist: np.ndarray, k: int) -> np.ndarray:
    """Sorted distinct k-th nearest-neighbor distances, the d0 search grid for k."""
    return np.unique(_kth_neighbor_distances(dist, k))


def select_k_d0(
    coords: Sequence[GeoPoint], z, k_max: int, dist: Optional[np.ndarray] = None
) -> WeightSelection:
    """
    Pick (k, d0) maximizing Moran's I of z on row-normalized inverse-distance weights.

    For each k in 1..k_max every candidate_thresholds value is tried. Ties go
    to the smaller k, then the smaller d0.
    """
    if k_max < 1:
        raise IntervalSarError(f"k_max must be >= 1, got {k_max}")
    if len(coords) < 3:
        raise ZeroDimension("weight selection needs at least three units")
    if dist is None:
        dist = distance_matrix(coords)
    _check_distances(dist)

    best: Optional[Tuple[int, float, float]] = None
    per_k = []
    for k in range(1, k_max + 1):
        best_k: Optional[Tuple[int, float, float]] = None
        for d0 in candidate_thresholds(dist, k):
            stat = morans_i(row_normalize(_inverse_distance_from(dist, k, float(d0))), z)
            if best_k is None or stat > best_k[2]:
                best_k = (k, float(d0), stat)
        per_k.append(best_k)
        if best is None or best_k[2] > best[2]:
            best = best_k
    logger.info("selected k=%d d0=%.2f km (Moran's I %.4f)", *best)
    return WeightSelection(k=best[0], d0=best[1], moran=best[2], per_k=tuple(per_k))
