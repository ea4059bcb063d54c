"""
Metric - Distancia entre categorías (forma exhaustiva y forma rápida media+varianza)
y matriz de afinidad con ancho de banda auto-ajustado
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from ..core.errors import AffinityError, DimensionError
from .dataio import CategoryStats

logger = logging.getLogger(__name__)

METRICS = ("pairwise", "mean")


def _as_rows(rows) -> np.ndarray:
    block = np.asarray(rows, dtype=np.float64)
    if block.ndim == 1:
        block = block[:, None]
    if block.ndim != 2 or block.shape[0] == 0:
        raise AffinityError("distance needs a non-empty set of vectors")
    return block


def distance_naive(rows_i, rows_j) -> float:
    """
    Distancia RMS sobre todos los pares cruzados:
    sqrt( 1/(N_i N_j) * sum_s sum_t ||I_s^i - I_t^j||^2 ).
    Cuesta N_i * N_j normas; se mantiene como oráculo de distance_fast.
    """
    a = _as_rows(rows_i)
    b = _as_rows(rows_j)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return float(np.sqrt(cdist(a, b, "sqeuclidean").mean()))


def distance_fast(stats_i: CategoryStats, stats_j: CategoryStats) -> float:
    """sqrt(||Q_i - Q_j||^2 + sigma_i^2 + sigma_j^2), O(D) con estadísticas precalculadas"""
    if stats_i.dim != stats_j.dim:
        raise DimensionError(f"dimension mismatch: {stats_i.dim} vs {stats_j.dim}")
    diff = stats_i.mean - stats_j.mean
    return float(np.sqrt(diff @ diff + (stats_i.variance_sq + stats_j.variance_sq)))


def pairwise_distances(stats: Sequence[CategoryStats], metric: str = "pairwise") -> np.ndarray:
    """Matriz N x N de distancias entre categorías (vectorizada)"""
    if metric not in METRICS:
        raise AffinityError(f"unknown metric '{metric}'")
    dims = {s.dim for s in stats}
    if len(dims) > 1:
        raise DimensionError(f"category statistics disagree on dimension: {sorted(dims)}")
    means = np.vstack([s.mean for s in stats])
    if metric == "mean":
        return cdist(means, means, "euclidean")
    var = np.array([s.variance_sq for s in stats])
    # (v_i + v_j) se suma primero para que la matriz sea exactamente simétrica
    squared = cdist(means, means, "sqeuclidean") + (var[:, None] + var[None, :])
    return np.sqrt(squared)


@dataclass(frozen=True, eq=False)
class AffinityMatrix:
    """
    Afinidades A_ij = exp(-dis_ij / delta_ij) con diagonal 1.
    scales guarda delta_i (distancia al tuning_k-ésimo vecino) de cada categoría.
    """
    values: np.ndarray
    bandwidths: np.ndarray
    distances: np.ndarray
    scales: np.ndarray
    metric: str = "pairwise"
    construction_cost: Dict[str, int] = field(default_factory=dict)

    @classmethod
    def single(cls) -> "AffinityMatrix":
        """Matriz 1 x 1 para un dataset de una sola categoría (árbol de un nodo)"""
        one = np.ones((1, 1))
        return cls(values=one, bandwidths=one, distances=np.zeros((1, 1)), scales=np.ones(1))

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    def submatrix(self, indices) -> np.ndarray:
        """Restricción de A a un subconjunto de categorías (sin recalcular anchos de banda)"""
        idx = np.asarray(indices, dtype=np.int64)
        return self.values[np.ix_(idx, idx)]


def _self_tuning_scales(distances: np.ndarray, tuning_k: int) -> np.ndarray:
    n = distances.shape[0]
    upper = distances[np.triu_indices(n, k=1)]
    positive = upper[upper > 0]
    fallback = float(np.median(positive)) if positive.size else 0.0

    if tuning_k >= n:
        logger.debug("tuning_k=%d >= N=%d, using median distance %.6g", tuning_k, n, fallback)
        return np.full(n, fallback)

    others = distances.copy()
    np.fill_diagonal(others, np.inf)
    scales = np.sort(others, axis=1)[:, tuning_k - 1]
    degenerate = scales <= 0
    if np.any(degenerate):
        logger.debug("%d categories have a zero local scale; using median distance", int(degenerate.sum()))
        scales = np.where(degenerate, fallback, scales)
    return scales


def build_affinity(stats: Sequence[CategoryStats], tuning_k: int = 7, metric: str = "pairwise") -> AffinityMatrix:
    """
    Construir la matriz de afinidad entre categorías.
    delta_i es la distancia al tuning_k-ésimo vecino más cercano y delta_ij = sqrt(delta_i delta_j).
    Si delta_i = 0 o tuning_k >= N se usa la mediana de las distancias positivas;
    si todas las distancias son 0, todas las afinidades valen 1.
    """
    n = len(stats)
    if n < 2:
        raise AffinityError(f"affinity needs at least 2 categories, got {n}")
    if tuning_k < 1:
        raise AffinityError("tuning_k must be >= 1")

    distances = pairwise_distances(stats, metric)
    if not np.all(np.isfinite(distances)):
        raise AffinityError("non-finite inter-class distance")

    scales = _self_tuning_scales(distances, tuning_k)
    if np.all(scales <= 0):
        # todas las categorías coinciden: máxima similitud
        values = np.ones((n, n))
        bandwidths = np.ones((n, n))
        scales = np.ones(n)
    else:
        bandwidths = np.sqrt(np.outer(scales, scales))
        values = np.exp(-distances / bandwidths)
        np.maximum(values, np.finfo(np.float64).tiny, out=values)
        np.fill_diagonal(values, 1.0)

    dim = stats[0].dim
    m = sum(s.count for s in stats)
    cost = {"stats": 2 * m * dim, "pairwise": n * n * dim}
    logger.debug("affinity built: N=%d metric=%s tuning_k=%d cost=%s", n, metric, tuning_k, cost)

    for array in (values, bandwidths, distances, scales):
        array.setflags(write=False)
    return AffinityMatrix(values=values, bandwidths=bandwidths, distances=distances,
                          scales=scales, metric=metric, construction_cost=cost)
