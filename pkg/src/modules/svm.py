"""
SVM - Clasificadores lineales por arista del árbol (hinge + regularización L2)
entrenados por subgradiente estocástico con promediado de iterados
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import DimensionError, TrainingError, UsageError
from ..core.seeding import derive_rng, derive_seed
from .dataio import FeatureDataset
from .tree import VisualTree

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Hiperparámetros del entrenamiento de aristas"""
    lam: float = 1e-4
    epochs: int = 30
    root_subsample: int = 600
    seed: int = 0
    tolerance: float = 1e-3
    batch_size: int = 64
    fit_bias: bool = True
    balance_classes: bool = False
    patience: int = 3

    def validate(self) -> "TrainConfig":
        if not self.lam > 0:
            raise UsageError("lambda must be > 0")
        if self.epochs < 1:
            raise UsageError("epochs must be >= 1")
        if self.root_subsample < 1:
            raise UsageError("root_subsample must be >= 1")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if self.tolerance < 0:
            raise UsageError("tolerance must be >= 0")
        return self

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class EdgeClassifier:
    """Clasificador de la arista (node, child_index): S(x) = w^T x + b"""
    node: int
    child_index: int
    weights: np.ndarray
    bias: float = 0.0
    objective: float = field(default=float("nan"), compare=False)
    train_accuracy: float = field(default=float("nan"), compare=False)

    def score(self, x: np.ndarray) -> float:
        return float(np.asarray(self.weights, dtype=np.float64) @ np.asarray(x, dtype=np.float64) + self.bias)


def _objective(w: np.ndarray, X: np.ndarray, y: np.ndarray, sample_weight: np.ndarray, lam: float) -> float:
    hinge = np.maximum(0.0, 1.0 - y * (X @ w))
    return float(0.5 * lam * (w @ w) + np.mean(sample_weight * hinge))


def svm_objective(weights: np.ndarray, bias: float, positives, negatives, lam: float) -> float:
    """(lambda/2)||(w, b)||^2 + media de la pérdida hinge"""
    X = np.vstack([np.asarray(positives, dtype=np.float64), np.asarray(negatives, dtype=np.float64)])
    y = np.concatenate([np.ones(len(positives)), -np.ones(len(negatives))])
    w = np.append(np.asarray(weights, dtype=np.float64), bias)
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    return _objective(w, Xa, y, np.ones_like(y), lam)


def _standardize(X: np.ndarray, fit_bias: bool) -> Tuple[np.ndarray, np.ndarray, float]:
    """Filas centradas (solo con sesgo) y escaladas a norma cuadrática media 1"""
    mu = X.mean(axis=0) if fit_bias else np.zeros(X.shape[1])
    scale = float(np.sqrt(np.mean(np.sum((X - mu) ** 2, axis=1))))
    if not scale > 0:
        scale = 1.0
    return (X - mu) / scale, mu, scale


def train_linear_svm(positives, negatives, config: TrainConfig, seed: Optional[int] = None,
                     node: int = -1, child_index: int = -1) -> EdgeClassifier:
    """
    Minimizar (lambda/2)||(w,b)||^2 + (1/m) sum hinge(y (w^T x + b)).

    El subgradiente se sigue sobre filas estandarizadas z = (x - mu) / s con parámetros
    u = (v, c), donde w = v / s y b = c - w^T mu; el objetivo es el mismo en ambas
    coordenadas. Mini-lotes barajados por época, paso eta0 / (1 + eta0 lambda_u t),
    proyección de (w, b) a la bola de radio sqrt(c_max/lambda) y promedio de iterados en
    la segunda mitad. Cada época se evalúa el objetivo completo del promedio y del último
    iterado y se conserva el mejor de los dos.
    """
    pos = np.asarray(positives, dtype=np.float64)
    neg = np.asarray(negatives, dtype=np.float64)
    if pos.ndim != 2 or neg.ndim != 2 or pos.shape[0] == 0 or neg.shape[0] == 0:
        raise TrainingError("both positive and negative sets must be non-empty", node=node if node >= 0 else None)
    if pos.shape[1] != neg.shape[1]:
        raise DimensionError(f"dimension mismatch: {pos.shape[1]} vs {neg.shape[1]}")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise TrainingError("non-finite training features", node=node if node >= 0 else None)

    lam = config.lam
    X = np.vstack([pos, neg])
    m, dim = X.shape
    Z, mu, scale = _standardize(X, config.fit_bias)
    if config.fit_bias:
        Z = np.hstack([Z, np.ones((m, 1))])
    y = np.concatenate([np.ones(pos.shape[0]), -np.ones(neg.shape[0])])
    if config.balance_classes:
        sample_weight = np.where(y > 0, m / (2.0 * pos.shape[0]), m / (2.0 * neg.shape[0]))
    else:
        sample_weight = np.ones(m)
    radius = np.sqrt(sample_weight.max() / lam)

    def to_original(u: np.ndarray) -> Tuple[np.ndarray, float]:
        w = u[:dim] / scale
        b = float(u[dim] - w @ mu) if config.fit_bias else 0.0
        return w, b

    def objective(u: np.ndarray) -> float:
        w, b = to_original(u)
        hinge = np.maximum(0.0, 1.0 - y * (Z @ u))
        return float(0.5 * lam * (w @ w + b * b) + np.mean(sample_weight * hinge))

    # cota inferior de la convexidad fuerte del regularizador en coordenadas u
    lam_u = lam / max(scale ** 2 + 2.0 * float(mu @ mu), 2.0) if config.fit_bias else lam / scale ** 2
    row_norm = float(np.mean(np.sum(Z ** 2, axis=1)))
    eta0 = 1.0 / row_norm if row_norm > 0 else 1.0

    rng = np.random.default_rng(derive_seed(config.seed if seed is None else seed, "svm"))
    batch = min(config.batch_size, m)
    steps_per_epoch = -(-m // batch)
    total_steps = steps_per_epoch * config.epochs
    average_from = total_steps // 2 + 1

    u = np.zeros(Z.shape[1])
    avg = np.zeros_like(u)
    n_avg = 0
    best_u = u.copy()
    best_obj = np.inf
    stalled = 0
    t = 0

    for epoch in range(config.epochs):
        order = rng.permutation(m)
        for start in range(0, m, batch):
            t += 1
            idx = order[start:start + batch]
            Zb, yb, sb = Z[idx], y[idx], sample_weight[idx]
            w, b = to_original(u)
            grad = np.empty_like(u)
            grad[:dim] = lam * (w - b * mu) / scale
            if config.fit_bias:
                grad[dim] = lam * b
            active = yb * (Zb @ u) < 1.0
            if np.any(active):
                grad -= (sb[active] * yb[active]) @ Zb[active] / idx.size
            u = u - eta0 / (1.0 + eta0 * lam_u * t) * grad
            w, b = to_original(u)
            norm = np.sqrt(w @ w + b * b)
            if norm > radius:
                u *= radius / norm
            if t >= average_from:
                n_avg += 1
                avg += (u - avg) / n_avg

        previous = best_obj
        for candidate in ((avg,) if n_avg else ()) + (u,):
            value = objective(candidate)
            if value < best_obj:
                best_obj = value
                best_u = candidate.copy()

        if n_avg:
            if previous - best_obj <= config.tolerance * max(1.0, abs(best_obj)):
                stalled += 1
                if stalled >= config.patience:
                    logger.debug("edge (%d, %d): converged after %d epochs", node, child_index, epoch + 1)
                    break
            else:
                stalled = 0

    best_w, best_b = to_original(best_u)
    weights = best_w.astype(np.float32)
    bias = float(np.float32(best_b))
    scores = X @ weights.astype(np.float64) + bias
    accuracy = float(np.mean(y * scores > 0))
    weights.setflags(write=False)
    return EdgeClassifier(node=node, child_index=child_index, weights=weights, bias=bias,
                          objective=best_obj, train_accuracy=accuracy)


@dataclass(frozen=True, eq=False)
class EdgeJob:
    """Conjunto de entrenamiento de una arista: filas positivas (hijo) y negativas (hermanos)"""
    node: int
    child_index: int
    positives: np.ndarray
    negatives: np.ndarray
    seed: int


def node_training_rows(tree: VisualTree, dataset: FeatureDataset, node_id: int, config: TrainConfig) -> Dict[int, np.ndarray]:
    """
    Filas de cada categoría usadas en un nodo. En la raíz cada categoría aporta como
    máximo root_subsample filas elegidas al azar (sea positiva o negativa).
    """
    node = tree.node(node_id)
    rows = {}
    for c in node.categories:
        own = dataset.rows_of(c)
        if node_id == tree.root and own.size > config.root_subsample:
            rng = derive_rng(config.seed, "root_subsample", c)
            own = np.sort(rng.choice(own, size=config.root_subsample, replace=False))
        rows[c] = own
    return rows


def plan_edges(tree: VisualTree, dataset: FeatureDataset, config: TrainConfig) -> List[EdgeJob]:
    """Un trabajo por arista, en el orden de tree.edges()"""
    if tree.n_categories != dataset.n_categories:
        raise TrainingError(f"tree covers {tree.n_categories} categories, dataset has {dataset.n_categories}")
    jobs = []
    for node in tree.internal_nodes():
        rows = node_training_rows(tree, dataset, node.id, config)
        child_rows = []
        for child_id in node.children:
            members = [rows[c] for c in tree.node(child_id).categories if c in rows]
            selected = np.concatenate(members) if members else np.empty(0, dtype=np.int64)
            if selected.size == 0:
                raise TrainingError(f"child {child_id} has no training samples", node=node.id)
            child_rows.append(selected)
        for i in range(node.fanout):
            negatives = np.concatenate([r for j, r in enumerate(child_rows) if j != i])
            jobs.append(EdgeJob(node=node.id, child_index=i, positives=child_rows[i], negatives=negatives,
                                seed=derive_seed(config.seed, "edge", node.id, i)))
    return jobs


def train_edge(job: EdgeJob, dataset: FeatureDataset, config: TrainConfig) -> EdgeClassifier:
    features = dataset.features
    return train_linear_svm(features[job.positives], features[job.negatives], config,
                            seed=job.seed, node=job.node, child_index=job.child_index)


@dataclass(frozen=True, eq=False)
class TreeModel:
    """Árbol visual con un clasificador por arista; cachea por nodo la matriz W (fan-out x D) y b"""
    tree: VisualTree
    classifiers: Tuple[EdgeClassifier, ...]
    dim: int
    _weights: Dict[int, np.ndarray] = field(default_factory=dict, init=False, repr=False)
    _biases: Dict[int, np.ndarray] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        classifiers = tuple(self.classifiers)
        edges = self.tree.edges()
        if len(classifiers) != len(edges):
            raise TrainingError(f"expected {len(edges)} edge classifiers, got {len(classifiers)}")
        by_node: Dict[int, List[EdgeClassifier]] = {}
        for (node_id, child_index), clf in zip(edges, classifiers):
            if (clf.node, clf.child_index) != (node_id, child_index):
                raise TrainingError(f"classifier for edge ({clf.node}, {clf.child_index}) "
                                    f"found where ({node_id}, {child_index}) was expected")
            if np.asarray(clf.weights).shape != (self.dim,):
                raise DimensionError(f"edge ({node_id}, {child_index}) has {np.asarray(clf.weights).shape} weights, expected ({self.dim},)")
            by_node.setdefault(node_id, []).append(clf)
        weights = {n: np.vstack([np.asarray(c.weights, dtype=np.float64) for c in cls]) for n, cls in by_node.items()}
        biases = {n: np.array([c.bias for c in cls], dtype=np.float64) for n, cls in by_node.items()}
        object.__setattr__(self, "classifiers", classifiers)
        object.__setattr__(self, "_weights", weights)
        object.__setattr__(self, "_biases", biases)

    @classmethod
    def from_weights(cls, tree: VisualTree, weights: Dict[int, Tuple[np.ndarray, Sequence[float]]]) -> "TreeModel":
        """Modelo con pesos fijados a mano: {nodo: (W fan-out x D, b)}"""
        classifiers = []
        dim = None
        for node_id, child_index in tree.edges():
            W, b = weights[node_id]
            W = np.atleast_2d(np.asarray(W, dtype=np.float32))
            dim = W.shape[1]
            classifiers.append(EdgeClassifier(node=node_id, child_index=child_index,
                                              weights=W[child_index], bias=float(b[child_index])))
        if dim is None:
            raise TrainingError("a model needs at least one edge; use the dimension of the data")
        return cls(tree=tree, classifiers=tuple(classifiers), dim=dim)

    def node_scores(self, node_id: int, x: np.ndarray) -> np.ndarray:
        """Puntuaciones S_v^i(x) de todos los hijos de un nodo"""
        return self._weights[node_id] @ x + self._biases[node_id]

    def classifier(self, node_id: int, child_index: int) -> EdgeClassifier:
        return self.classifiers[self.tree.edges().index((node_id, child_index))]

    @property
    def n_classifiers(self) -> int:
        return len(self.classifiers)

    def get_statistics(self) -> Dict:
        accuracies = [c.train_accuracy for c in self.classifiers if np.isfinite(c.train_accuracy)]
        stats = self.tree.get_statistics()
        stats.update({
            "classifiers": self.n_classifiers,
            "dim": self.dim,
            "min_train_accuracy": min(accuracies) if accuracies else None,
        })
        return stats


def train_tree_model(tree: VisualTree, dataset: FeatureDataset, config: TrainConfig) -> TreeModel:
    """
    Entrenar un clasificador por arista: positivos del hijo C_v^i, negativos de sus hermanos.
    Ejecución secuencial; el pipeline paraleliza las mismas tareas con idéntico resultado.
    """
    config.validate()
    jobs = plan_edges(tree, dataset, config)
    classifiers = tuple(train_edge(job, dataset, config) for job in jobs)
    model = TreeModel(tree=tree, classifiers=classifiers, dim=dataset.dim)
    logger.info("trained %d edge classifiers", model.n_classifiers)
    return model
