"""
DataIO - Datasets de características etiquetadas: lectura/escritura CSV y binaria,
estadísticas por categoría y generación sintética con jerarquía plantada
"""
import csv
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import DataFormatError, UsageError
from ..core.seeding import derive_seed

logger = logging.getLogger(__name__)

BINARY_MAGIC = b"HVTF"
BINARY_VERSION = 1
# magic, versión, m, D (little-endian, sin padding)
_HEADER = struct.Struct("<4sBII")

FORMATS = ("csv", "bin")


def normalize_format(fmt: Optional[str], path: Optional[str] = None) -> str:
    """Resolver el formato ('csv' | 'bin'); si no se indica, se infiere de la extensión"""
    if fmt is None:
        if path is not None and Path(path).suffix.lower() == ".csv":
            return "csv"
        return "bin"
    fmt = fmt.lower()
    if fmt == "binary":
        return "bin"
    if fmt not in FORMATS:
        raise UsageError(f"unknown dataset format '{fmt}' (expected csv or bin)")
    return fmt


def _index_categories(labels: np.ndarray, n_categories: int) -> Tuple[np.ndarray, ...]:
    order = np.argsort(labels, kind="stable")
    counts = np.bincount(labels, minlength=n_categories)
    return tuple(np.split(order, np.cumsum(counts)[:-1]))


@dataclass(frozen=True, eq=False)
class FeatureDataset:
    """
    Vectores de características (m x D, float32) con etiquetas densas 0..N-1.
    category_ids guarda el id externo original de cada categoría densa.
    """
    features: np.ndarray
    labels: np.ndarray
    category_ids: Tuple[int, ...]
    category_index: Tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        n_categories = len(self.category_ids)

        if features.ndim != 2 or features.shape[1] < 1:
            raise DataFormatError(f"features must be a 2-D matrix with D >= 1, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise DataFormatError("labels must have one entry per feature row")
        if features.shape[0] == 0:
            raise DataFormatError("dataset is empty")
        if not np.all(np.isfinite(features)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(features), axis=1))[0])
            raise DataFormatError("non-finite feature value", record=bad + 1)
        if labels.min() < 0 or labels.max() >= n_categories:
            raise DataFormatError(f"labels must lie in [0, {n_categories})")

        index = _index_categories(labels, n_categories)
        for c, rows in enumerate(index):
            if rows.size == 0:
                raise DataFormatError(f"category {self.category_ids[c]} has no samples")

        features.setflags(write=False)
        labels.setflags(write=False)
        for rows in index:
            rows.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "category_ids", tuple(int(c) for c in self.category_ids))
        object.__setattr__(self, "category_index", index)

    @classmethod
    def from_arrays(cls, features: np.ndarray, raw_labels: Sequence[int],
                    category_ids: Optional[Sequence[int]] = None) -> "FeatureDataset":
        """
        Construir un dataset remapeando ids externos arbitrarios a 0..N-1.
        Si category_ids se indica, se usa ese mapa (p.ej. para conservar el de un modelo).
        """
        raw = np.asarray(raw_labels, dtype=np.int64)
        if category_ids is None:
            category_ids = np.unique(raw)
        ids = np.asarray(category_ids, dtype=np.int64)
        dense = np.searchsorted(ids, raw)
        dense = np.clip(dense, 0, max(len(ids) - 1, 0))
        if len(ids) == 0 or not np.array_equal(ids[dense], raw):
            raise DataFormatError("labels outside the category map")
        return cls(features=features, labels=dense, category_ids=tuple(int(i) for i in ids))

    @property
    def n_samples(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_categories(self) -> int:
        return len(self.category_ids)

    def rows_of(self, category: int) -> np.ndarray:
        """Índices de fila de una categoría densa"""
        return self.category_index[category]

    def original_labels(self) -> np.ndarray:
        return np.asarray(self.category_ids, dtype=np.int64)[self.labels]

    def subset(self, rows: np.ndarray) -> "FeatureDataset":
        """Subconjunto de filas con el mismo mapa de categorías"""
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureDataset(
            features=self.features[rows],
            labels=self.labels[rows],
            category_ids=self.category_ids,
        )


@dataclass(frozen=True, eq=False)
class CategoryStats:
    """Media Q_i, varianza poblacional al cuadrado sigma_i^2 y tamaño N_i de una categoría"""
    mean: np.ndarray
    variance_sq: float
    count: int

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


def category_stats(rows: np.ndarray) -> CategoryStats:
    """Estadísticas de un bloque de filas (dos pasadas, forma 1/N_i)"""
    block = np.asarray(rows, dtype=np.float64)
    if block.ndim != 2 or block.shape[0] == 0:
        raise DataFormatError("category block must be a non-empty 2-D matrix")
    if np.all(block == block[0]):
        # identidad exacta: sin error de redondeo en la media
        mean = block[0].copy()
        variance_sq = 0.0
    else:
        mean = block.mean(axis=0)
        deviations = block - mean
        variance_sq = float(np.einsum("ij,ij->", deviations, deviations) / block.shape[0])
    mean.setflags(write=False)
    return CategoryStats(mean=mean, variance_sq=variance_sq, count=int(block.shape[0]))


def compute_stats(dataset: FeatureDataset) -> List[CategoryStats]:
    """Una CategoryStats por categoría densa, en orden de id"""
    stats = [category_stats(dataset.features[rows]) for rows in dataset.category_index]
    logger.debug("computed stats for %d categories over %d rows", len(stats), dataset.n_samples)
    return stats


def l2_normalize(dataset: FeatureDataset) -> FeatureDataset:
    """Normalizar cada fila a norma L2 unitaria (las filas nulas quedan nulas)"""
    features = dataset.features.astype(np.float64)
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    np.divide(features, norms, out=features, where=norms > 0)
    return FeatureDataset(features=features, labels=dataset.labels, category_ids=dataset.category_ids)


# -------------------------
# Lectura / escritura
# -------------------------

def _parse_csv(path: Path, labeled: bool) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    rows: List[List[float]] = []
    labels: List[int] = []
    dim: Optional[int] = None

    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        for fields in reader:
            record = reader.line_num
            if not fields or (len(fields) == 1 and not fields[0].strip()):
                continue
            if fields[0].lstrip().startswith("#"):
                continue

            if labeled:
                raw_label = fields[0].strip()
                try:
                    label = int(raw_label)
                except ValueError:
                    raise DataFormatError(f"label '{raw_label}' is not an integer", record, str(path)) from None
                if label < 0:
                    raise DataFormatError(f"label {label} is negative", record, str(path))
                values = fields[1:]
            else:
                label = 0
                values = fields

            if not values:
                raise DataFormatError("record has no feature values", record, str(path))
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise DataFormatError(f"expected {dim} features, found {len(values)}", record, str(path))

            parsed = []
            for col, text in enumerate(values, start=2 if labeled else 1):
                try:
                    value = float(text)
                except ValueError:
                    raise DataFormatError(f"column {col}: '{text.strip()}' is not a number", record, str(path)) from None
                if not math.isfinite(value):
                    raise DataFormatError(f"column {col}: non-finite value '{text.strip()}'", record, str(path))
                parsed.append(value)
            rows.append(parsed)
            labels.append(label)

    if not rows:
        raise DataFormatError("empty file", path=str(path))
    features = np.asarray(rows, dtype=np.float64).astype(np.float32)
    if not np.all(np.isfinite(features)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(features), axis=1))[0])
        raise DataFormatError("value overflows float32", bad + 1, str(path))
    return features, (np.asarray(labels, dtype=np.int64) if labeled else None)


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("label", "<u4"), ("x", "<f4", (dim,))])


def _parse_binary(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    blob = path.read_bytes()
    if len(blob) == 0:
        raise DataFormatError("empty file", path=str(path))
    if len(blob) < _HEADER.size:
        raise DataFormatError("truncated header", path=str(path))
    magic, version, m, dim = _HEADER.unpack_from(blob, 0)
    if magic != BINARY_MAGIC:
        raise DataFormatError(f"bad magic {magic!r}", path=str(path))
    if version != BINARY_VERSION:
        raise DataFormatError(f"unsupported version {version}", path=str(path))
    if m == 0:
        raise DataFormatError("empty file (m = 0)", path=str(path))
    if dim == 0:
        raise DataFormatError("dimension D = 0", path=str(path))

    dtype = _record_dtype(dim)
    expected = _HEADER.size + m * dtype.itemsize
    if len(blob) != expected:
        complete = (len(blob) - _HEADER.size) // dtype.itemsize
        raise DataFormatError(f"expected {expected} bytes, found {len(blob)}",
                              record=min(complete + 1, m), path=str(path))

    records = np.frombuffer(blob, dtype=dtype, count=m, offset=_HEADER.size)
    features = np.array(records["x"], dtype=np.float32)
    finite = np.all(np.isfinite(features), axis=1)
    if not np.all(finite):
        raise DataFormatError("non-finite feature value", int(np.flatnonzero(~finite)[0]) + 1, str(path))
    return features, records["label"].astype(np.int64)


def load_dataset(path, format: Optional[str] = None) -> FeatureDataset:
    """
    Cargar un dataset CSV (`label,f0,...`) o binario (HVTF).
    Los ids de categoría se remapean a 0..N-1; el mapa queda en category_ids.
    """
    path = Path(path)
    fmt = normalize_format(format, str(path))
    if fmt == "csv":
        features, labels = _parse_csv(path, labeled=True)
    else:
        features, labels = _parse_binary(path)
    dataset = FeatureDataset.from_arrays(features, labels)
    logger.info("loaded %s: m=%d D=%d N=%d", path, dataset.n_samples, dataset.dim, dataset.n_categories)
    return dataset


def load_queries(path, format: Optional[str] = None, labeled: bool = True) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Cargar filas de consulta. Devuelve (features float32, etiquetas originales o None).
    Un CSV sin etiquetas (labeled=False) trata todas las columnas como características.
    """
    path = Path(path)
    fmt = normalize_format(format, str(path))
    if fmt == "csv":
        return _parse_csv(path, labeled=labeled)
    features, labels = _parse_binary(path)
    return features, (labels if labeled else None)


def save_dataset(dataset: FeatureDataset, path, format: Optional[str] = None) -> Path:
    """Escribir el dataset con sus ids originales"""
    path = Path(path)
    fmt = normalize_format(format, str(path))
    original = dataset.original_labels()

    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            for label, row in zip(original, dataset.features):
                writer.writerow([int(label)] + [repr(float(v)) for v in row])
    else:
        if original.max() > 0xFFFFFFFF:
            raise DataFormatError("category id exceeds the u32 range of the binary format")
        records = np.empty(dataset.n_samples, dtype=_record_dtype(dataset.dim))
        records["label"] = original
        records["x"] = dataset.features
        with open(path, "wb") as f:
            f.write(_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, dataset.n_samples, dataset.dim))
            f.write(records.tobytes())
    logger.info("saved %s (%s, m=%d)", path, fmt, dataset.n_samples)
    return path


def load_category_names(path) -> Dict[int, str]:
    """Leer un mapa `id,nombre` (una categoría por línea)"""
    names: Dict[int, str] = {}
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        for fields in reader:
            if not fields or fields[0].lstrip().startswith("#"):
                continue
            if len(fields) < 2:
                raise DataFormatError("expected 'id,name'", reader.line_num, str(path))
            try:
                names[int(fields[0])] = ",".join(fields[1:]).strip()
            except ValueError:
                raise DataFormatError(f"'{fields[0]}' is not an integer id", reader.line_num, str(path)) from None
    return names


# -------------------------
# Particiones de datos
# -------------------------

@dataclass(frozen=True, eq=False)
class DataSplit:
    """División entrenamiento/prueba por categoría"""
    train: FeatureDataset
    test_features: np.ndarray
    test_labels: np.ndarray
    train_rows: np.ndarray
    test_rows: np.ndarray


def split_per_class(dataset: FeatureDataset, train_per_class: Optional[int] = None,
                    test_per_class: Optional[int] = None, seed: int = 0) -> DataSplit:
    """
    Muestrear por categoría N_train filas de entrenamiento y N_test de prueba.
    test_per_class=None significa "el resto"; sin ninguno de los dos se usa 80/20.
    Cada categoría conserva al menos una fila de entrenamiento.
    """
    if train_per_class is not None and train_per_class < 1:
        raise UsageError("train_per_class must be >= 1")
    if test_per_class is not None and test_per_class < 0:
        raise UsageError("test_per_class must be >= 0")

    rng = np.random.default_rng(derive_seed(seed, "split"))
    train_rows, test_rows = [], []
    for rows in dataset.category_index:
        perm = rng.permutation(rows)
        size = len(perm)
        if train_per_class is None:
            held = test_per_class if test_per_class is not None else int(round(0.2 * size))
            n_train = max(1, size - held)
        else:
            n_train = min(train_per_class, size)
        rest = perm[n_train:]
        n_test = len(rest) if test_per_class is None else min(test_per_class, len(rest))
        train_rows.append(perm[:n_train])
        test_rows.append(rest[:n_test])

    train_idx = np.sort(np.concatenate(train_rows))
    test_idx = np.sort(np.concatenate(test_rows)) if test_rows else np.empty(0, dtype=np.int64)
    return DataSplit(
        train=dataset.subset(train_idx),
        test_features=dataset.features[test_idx],
        test_labels=dataset.labels[test_idx],
        train_rows=train_idx,
        test_rows=test_idx,
    )


def split_folds(dataset: FeatureDataset, n_folds: int, seed: int = 0) -> List[Tuple[FeatureDataset, np.ndarray]]:
    """
    Dividir aleatoriamente los datos en n_folds conjuntos disjuntos, estratificados por categoría.
    Una categoría con menos filas que folds presta sus filas en round-robin.
    """
    if n_folds < 1:
        raise UsageError("n_folds must be >= 1")
    if n_folds == 1:
        return [(dataset, np.arange(dataset.n_samples, dtype=np.int64))]

    rng = np.random.default_rng(derive_seed(seed, "folds", n_folds))
    per_fold: List[List[np.ndarray]] = [[] for _ in range(n_folds)]
    for c, rows in enumerate(dataset.category_index):
        perm = rng.permutation(rows)
        if len(perm) >= n_folds:
            for f in range(n_folds):
                per_fold[f].append(perm[f::n_folds])
        else:
            logger.warning("category %d has %d rows for %d folds; rows are shared",
                           dataset.category_ids[c], len(perm), n_folds)
            for f in range(n_folds):
                per_fold[f].append(perm[f % len(perm):f % len(perm) + 1])

    folds = []
    for chunks in per_fold:
        rows = np.sort(np.concatenate(chunks))
        folds.append((dataset.subset(rows), rows))
    return folds


# -------------------------
# Generación sintética
# -------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Parámetros del generador de clusters gaussianos con jerarquía plantada"""
    n_categories: int = 16
    samples_per_category: int = 50
    dim: int = 16
    hierarchy_branching: int = 4
    noise_scale: float = 1.0
    seed: int = 0
    # radio del primer nivel (spread * sqrt(dim)) y factor de reducción por nivel;
    # con shrink <= 0.28 y hierarchy_branching <= dim la jerarquía plantada es exacta
    spread: float = 10.0
    shrink: float = 0.25

    def validate(self) -> None:
        for name in ("n_categories", "samples_per_category", "dim", "hierarchy_branching"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if not self.noise_scale > 0:
            raise UsageError("noise_scale must be > 0")
        if not self.spread > 0 or not 0 < self.shrink <= 1:
            raise UsageError("spread must be > 0 and shrink in (0, 1]")

    @property
    def levels(self) -> int:
        """Niveles de la jerarquía plantada (b^levels >= n_categories)"""
        b = self.hierarchy_branching
        if b < 2:
            return 1
        levels = 1
        while b ** levels < self.n_categories:
            levels += 1
        return levels


def planted_hierarchy(config: SynthConfig) -> np.ndarray:
    """
    Ruta plantada de cada categoría: matriz (n_categories, levels) con el índice de hijo
    en cada nivel. La columna 0 es el supergrupo de primer nivel.
    """
    b = config.hierarchy_branching if config.hierarchy_branching >= 2 else config.n_categories
    paths = np.zeros((config.n_categories, config.levels), dtype=np.int64)
    for c in range(config.n_categories):
        rest = c
        for level in range(config.levels - 1, -1, -1):
            paths[c, level] = rest % b
            rest //= b
    return paths


def sibling_offsets(rng: np.random.Generator, n_parents: int, b: int, dim: int, radius: float) -> np.ndarray:
    """
    Desplazamientos (n_parents, b, dim) de norma radius. Si b <= dim los hermanos son
    ortonormales entre sí (distancia radius * sqrt(2)); si no, direcciones al azar.
    """
    G = rng.standard_normal((n_parents, dim, b))
    if b <= dim:
        Q, _ = np.linalg.qr(G)
        directions = np.swapaxes(Q, 1, 2)
    else:
        directions = np.swapaxes(G, 1, 2)
        directions = directions / np.linalg.norm(directions, axis=2, keepdims=True)
    return radius * directions


def generate_synthetic(config: SynthConfig) -> FeatureDataset:
    """
    Generar categorías gaussianas cuyas medias cuelgan de un árbol de supercentros
    con fan-out hierarchy_branching. Función pura de config.
    """
    config.validate()
    rng = np.random.default_rng(derive_seed(config.seed, "synth"))
    b = config.hierarchy_branching if config.hierarchy_branching >= 2 else config.n_categories
    dim = config.dim

    centers = np.zeros((1, dim))
    radius = config.spread * np.sqrt(dim)
    for _ in range(config.levels):
        offsets = sibling_offsets(rng, centers.shape[0], b, dim, radius)
        centers = (centers[:, None, :] + offsets).reshape(-1, dim)
        radius *= config.shrink
    means = centers[:config.n_categories]

    s = config.samples_per_category
    noise = config.noise_scale * rng.standard_normal((config.n_categories, s, dim))
    features = (means[:, None, :] + noise).reshape(-1, dim).astype(np.float32)
    labels = np.repeat(np.arange(config.n_categories), s)
    logger.debug("generated synthetic dataset: N=%d m=%d D=%d levels=%d",
                 config.n_categories, features.shape[0], dim, config.levels)
    return FeatureDataset(features=features, labels=labels, category_ids=tuple(range(config.n_categories)))
