"""
Spectral - Partición de un conjunto de categorías en K grupos:
embedding del Laplaciano normalizado simétrico + k-means determinista
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from ..core.errors import SpectralError
from ..core.seeding import derive_seed

logger = logging.getLogger(__name__)

MAX_ITERS = 300
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Partition:
    """Asignación de cada categoría a un grupo 0..n_groups-1 (ids canónicos por primera aparición)"""
    assignment: np.ndarray
    n_groups: int
    inertia: float = 0.0
    method: str = "spectral"

    def groups(self) -> List[np.ndarray]:
        """Índices (posiciones de entrada) de cada grupo"""
        return [np.flatnonzero(self.assignment == g) for g in range(self.n_groups)]


def _canonical(assignment: np.ndarray) -> Tuple[np.ndarray, int]:
    _, first = np.unique(assignment, return_index=True)
    order = np.argsort(first)
    relabel = np.empty(assignment.max() + 1, dtype=np.int64)
    relabel[np.unique(assignment)[order]] = np.arange(order.size)
    return relabel[assignment], int(order.size)


def normalized_laplacian(affinity) -> np.ndarray:
    """L_sym = I - D^{-1/2} A D^{-1/2}"""
    A = np.asarray(affinity, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise SpectralError(f"affinity must be square, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if np.max(np.abs(A - A.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise SpectralError("affinity matrix is not symmetric")
    if np.any(A < 0) or not np.all(np.isfinite(A)):
        raise SpectralError("affinity entries must be finite and nonnegative")

    degree = A.sum(axis=1)
    inv_sqrt = np.zeros_like(degree)
    np.divide(1.0, np.sqrt(degree), out=inv_sqrt, where=degree > 0)
    L = np.eye(A.shape[0]) - inv_sqrt[:, None] * A * inv_sqrt[None, :]
    return 0.5 * (L + L.T)


def spectral_eigenpairs(affinity, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Los k autovalores más pequeños de L_sym y sus autovectores (columnas ortonormales),
    con el signo fijado: la componente de mayor magnitud de cada vector es positiva.
    """
    L = normalized_laplacian(affinity)
    n = L.shape[0]
    if not 1 <= k <= n:
        raise SpectralError(f"embedding size k={k} must lie in [1, {n}]")
    try:
        values, vectors = scipy.linalg.eigh(L, subset_by_index=[0, k - 1])
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SpectralError(f"eigensolver failed: {e}") from None

    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(k)])
    signs[signs == 0] = 1.0
    return values, vectors * signs


def laplacian_embed(affinity, k: int) -> np.ndarray:
    """Embedding n x k: autovectores de L_sym normalizados por fila (filas nulas quedan nulas)"""
    n = np.asarray(affinity).shape[0]
    if not 2 <= k <= n:
        raise SpectralError(f"embedding size k={k} must lie in [2, {n}]")
    _, vectors = spectral_eigenpairs(affinity, k)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    embedding = np.zeros_like(vectors)
    np.divide(vectors, norms, out=embedding, where=norms > 1e-12)
    return embedding


def _kmeans_plusplus(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """
    Siembra k-means++ que depende solo de los valores: los sorteos recorren los puntos
    ordenados por distancia (al centroide para el primero, al centro más cercano después),
    así que permutar las filas o aplicar una isometría no cambia los centros elegidos.
    """
    n = points.shape[0]
    centers = np.empty((K, points.shape[1]))
    spread = ((points - points.mean(axis=0)) ** 2).sum(axis=1)
    by_spread = np.argsort(spread, kind="stable")
    chosen = [int(by_spread[rng.integers(n)])]
    centers[0] = points[chosen[0]]
    closest = cdist(points, centers[:1], "sqeuclidean")[:, 0]
    for c in range(1, K):
        total = closest.sum()
        if total > 0:
            order = np.argsort(closest, kind="stable")
            cumulative = np.cumsum(closest[order])
            pos = int(np.searchsorted(cumulative, rng.random() * total, side="right"))
            idx = int(order[min(pos, n - 1)])
        else:
            # todos los puntos coinciden con algún centro
            idx = int(next(i for i in by_spread if i not in chosen))
        chosen.append(idx)
        centers[c] = points[idx]
        np.minimum(closest, cdist(points, centers[c:c + 1], "sqeuclidean")[:, 0], out=closest)
    return centers


def _repair_empty(assignment: np.ndarray, dist2: np.ndarray, K: int) -> np.ndarray:
    counts = np.bincount(assignment, minlength=K)
    for c in np.flatnonzero(counts == 0):
        own = dist2[np.arange(assignment.size), assignment]
        own = np.where(counts[assignment] > 1, own, -np.inf)
        victim = int(np.argmax(own))
        counts[assignment[victim]] -= 1
        assignment[victim] = c
        counts[c] = 1
    return assignment


def _lloyd(points: np.ndarray, K: int, rng: np.random.Generator, max_iters: int) -> Tuple[np.ndarray, float]:
    centers = _kmeans_plusplus(points, K, rng)
    previous = None
    for _ in range(max_iters):
        dist2 = cdist(points, centers, "sqeuclidean")
        assignment = _repair_empty(np.argmin(dist2, axis=1), dist2, K)
        if previous is not None and np.array_equal(assignment, previous):
            break
        previous = assignment
        centers = np.vstack([points[assignment == c].mean(axis=0) for c in range(K)])

    centers = np.vstack([points[assignment == c].mean(axis=0) for c in range(K)])
    inertia = float(((points - centers[assignment]) ** 2).sum())
    return assignment, inertia


def kmeans(points, K: int, seed: int, max_iters: int = MAX_ITERS, n_init: int = 1) -> Partition:
    """
    k-means con siembra k-means++ e iteración de Lloyd.
    Empates al centroide más cercano van al grupo de menor id; un grupo vacío roba el punto
    más lejano de su centroide. Con n_init > 1 se conserva la menor suma de cuadrados.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if K < 1 or K > n:
        raise SpectralError(f"kmeans needs 1 <= K <= n, got K={K}, n={n}")
    if not np.all(np.isfinite(X)):
        raise SpectralError("kmeans input contains non-finite values")

    best: Optional[Tuple[np.ndarray, float]] = None
    for restart in range(max(1, n_init)):
        rng = np.random.default_rng(derive_seed(seed, "kmeans", restart))
        assignment, inertia = _lloyd(X, K, rng, max_iters)
        if best is None or inertia < best[1]:
            best = (assignment, inertia)

    assignment, n_groups = _canonical(best[0])
    return Partition(assignment=assignment, n_groups=n_groups, inertia=best[1], method="kmeans")


def _round_robin(n: int, K: int) -> Partition:
    assignment = np.arange(n) % K
    return Partition(assignment=assignment, n_groups=min(n, K), method="round_robin")


def spectral_partition(affinity, K: int, seed: int, means: Optional[np.ndarray] = None) -> Partition:
    """
    Dividir n >= 2 categorías en hasta K grupos (siempre al menos 2).
    Cadena de respaldo si el resultado es degenerado o el embedding falla:
    tres semillas derivadas, k-means sobre las medias Q_i, y reparto round-robin
    en el orden de entrada (ids de categoría ordenados).
    """
    A = np.asarray(affinity, dtype=np.float64)
    n = A.shape[0] if A.ndim == 2 else 0
    if n < 2:
        raise SpectralError(f"partition needs at least 2 categories, got {n}")
    if K < 2:
        raise SpectralError(f"partition needs K >= 2, got {K}")
    if n == 2:
        return Partition(assignment=np.array([0, 1]), n_groups=2, method="forced")

    k_eff = min(K, n)
    embedding = None
    try:
        embedding = laplacian_embed(A, k_eff)
        if not np.all(np.isfinite(embedding)):
            raise SpectralError("non-finite spectral embedding")
        part = kmeans(embedding, k_eff, seed)
        if part.n_groups >= 2:
            return Partition(assignment=part.assignment, n_groups=part.n_groups,
                             inertia=part.inertia, method="spectral")
        logger.warning("degenerate spectral partition of %d categories; trying fallbacks", n)
    except SpectralError as e:
        if "symmetric" in e.message or "nonnegative" in e.message:
            raise
        logger.warning("spectral embedding failed (%s); trying fallbacks", e.message)
        embedding = None

    if embedding is not None:
        for attempt in range(3):
            part = kmeans(embedding, k_eff, derive_seed(seed, "reseed", attempt))
            if part.n_groups >= 2:
                return Partition(part.assignment, part.n_groups, part.inertia, method="reseed")

    if means is not None:
        try:
            part = kmeans(means, k_eff, derive_seed(seed, "means"))
            if part.n_groups >= 2:
                return Partition(part.assignment, part.n_groups, part.inertia, method="means")
        except SpectralError as e:
            logger.warning("kmeans on category means failed: %s", e.message)

    logger.warning("falling back to round-robin split of %d categories", n)
    return _round_robin(n, k_eff)
