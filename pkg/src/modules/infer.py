"""
Infer - Predicción sobre un árbol entrenado: probabilidad de arista, descenso greedy,
mejor camino exhaustivo, búsqueda N-best por capas y ensambles de árboles
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from ..core.errors import DimensionError, IncompatibleModelError, UsageError
from .svm import TreeModel

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]

# probabilidades reportadas nunca llegan a 0 aunque exp(log_prob) se desborde hacia abajo
MIN_PROBABILITY = np.finfo(np.float64).tiny


def edge_probability(score: float) -> float:
    """p(e|v) = 1 / (1 + exp(-S)), rama estable para |S| grande"""
    if score >= 0:
        return 1.0 / (1.0 + math.exp(-score))
    z = math.exp(score)
    return z / (1.0 + z)


def log_edge_probabilities(scores: np.ndarray, renormalize: bool = False) -> np.ndarray:
    """log sigmoid(S) para todos los hijos; con renormalize los hermanos suman 1"""
    logp = -np.logaddexp(0.0, -scores)
    if renormalize:
        logp = logp - logsumexp(logp)
    return logp


@dataclass(frozen=True)
class PathHypothesis:
    """Camino parcial desde la raíz con log-probabilidad conjunta acumulada"""
    node: int
    edges: Tuple[Edge, ...]
    log_prob: float
    last_score: float
    complete: bool


@dataclass(frozen=True)
class Prediction:
    """
    Ranking de (categoría densa, probabilidad del camino) en orden no creciente,
    con log-probabilidades y caminos alineados, y contadores de coste.
    """
    ranked: Tuple[Tuple[int, float], ...]
    log_probs: Tuple[float, ...]
    paths: Tuple[Tuple[Edge, ...], ...]
    classifier_evaluations: int
    multiplications: int = 0

    @property
    def labels(self) -> List[int]:
        return [c for c, _ in self.ranked]

    @property
    def top(self) -> int:
        return self.ranked[0][0]

    @property
    def top_log_prob(self) -> float:
        return self.log_probs[0]


def _check_query(model: TreeModel, x) -> np.ndarray:
    query = np.asarray(x, dtype=np.float64)
    if query.shape != (model.dim,):
        raise DimensionError(f"query has shape {query.shape}, model expects ({model.dim},)")
    return query


def _rank_key(h: PathHypothesis, model: TreeModel):
    # mayor log-prob; a igualdad, mayor puntuación de la última arista; luego menor categoría
    return (-h.log_prob, -h.last_score, model.tree.node(h.node).categories[0])


def _expand(model: TreeModel, hyp: PathHypothesis, x: np.ndarray, renormalize: bool) -> List[PathHypothesis]:
    node = model.tree.node(hyp.node)
    scores = model.node_scores(node.id, x)
    logp = log_edge_probabilities(scores, renormalize)
    expanded = []
    for i, child_id in enumerate(node.children):
        expanded.append(PathHypothesis(
            node=child_id,
            edges=hyp.edges + ((node.id, i),),
            log_prob=hyp.log_prob + float(logp[i]),
            last_score=float(scores[i]),
            complete=model.tree.node(child_id).is_leaf,
        ))
    return expanded


def _root(model: TreeModel) -> PathHypothesis:
    root = model.tree.root
    return PathHypothesis(node=root, edges=(), log_prob=0.0, last_score=math.inf,
                          complete=model.tree.node(root).is_leaf)


def _to_prediction(model: TreeModel, hyps: Sequence[PathHypothesis], evaluations: int, multiplications: int) -> Prediction:
    tree = model.tree
    probabilities = (max(math.exp(h.log_prob), MIN_PROBABILITY) for h in hyps)
    return Prediction(
        ranked=tuple((tree.node(h.node).categories[0], p) for h, p in zip(hyps, probabilities)),
        log_probs=tuple(h.log_prob for h in hyps),
        paths=tuple(h.edges for h in hyps),
        classifier_evaluations=evaluations,
        multiplications=multiplications,
    )


def predict_greedy(model: TreeModel, x, renormalize: bool = False) -> Prediction:
    """Descenso desde la raíz siguiendo argmax_j S_v^j(x); empates hacia el menor índice de hijo"""
    query = _check_query(model, x)
    hyp = _root(model)
    evaluations = 0
    while not hyp.complete:
        node = model.tree.node(hyp.node)
        scores = model.node_scores(node.id, query)
        evaluations += node.fanout
        best = int(np.argmax(scores))
        logp = log_edge_probabilities(scores, renormalize)
        child_id = node.children[best]
        hyp = PathHypothesis(node=child_id, edges=hyp.edges + ((node.id, best),),
                             log_prob=hyp.log_prob + float(logp[best]), last_score=float(scores[best]),
                             complete=model.tree.node(child_id).is_leaf)
    return _to_prediction(model, [hyp], evaluations, max(len(hyp.edges) - 1, 0))


def predict_exhaustive(model: TreeModel, x, renormalize: bool = False) -> Prediction:
    """Probabilidad conjunta de todos los caminos raíz-hoja; ranking completo de las N categorías"""
    query = _check_query(model, x)
    evaluations = 0
    multiplications = 0
    leaves = []
    stack = [_root(model)]
    while stack:
        hyp = stack.pop()
        if hyp.complete:
            leaves.append(hyp)
            continue
        evaluations += model.tree.node(hyp.node).fanout
        children = _expand(model, hyp, query, renormalize)
        if hyp.edges:
            multiplications += len(children)
        stack.extend(reversed(children))
    leaves.sort(key=lambda h: _rank_key(h, model))
    return _to_prediction(model, leaves, evaluations, multiplications)


def predict_nbest(model: TreeModel, x, beam: int = 5, renormalize: bool = False) -> Prediction:
    """
    Búsqueda por capas: cada hipótesis del haz se expande con todos los hijos de su frontera
    y se conservan las Q mejores; las hipótesis completas siguen compitiendo por las Q plazas.
    En la última expansión se devuelven todas las candidatas (hasta Q x K hojas).
    """
    if beam < 1:
        raise UsageError(f"beam width Q must be >= 1, got {beam}")
    query = _check_query(model, x)
    evaluations = 0
    multiplications = 0
    hyps = [_root(model)]
    while not all(h.complete for h in hyps):
        candidates = []
        for hyp in hyps:
            if hyp.complete:
                candidates.append(hyp)
                continue
            evaluations += model.tree.node(hyp.node).fanout
            children = _expand(model, hyp, query, renormalize)
            if hyp.edges:
                multiplications += len(children)
            candidates.extend(children)
        candidates.sort(key=lambda h: _rank_key(h, model))
        if all(h.complete for h in candidates):
            hyps = candidates
            break
        hyps = candidates[:beam]
    return _to_prediction(model, hyps, evaluations, multiplications)


def check_compatible(models: Sequence[TreeModel]) -> None:
    if not models:
        raise IncompatibleModelError("ensemble needs at least one model")
    dims = {m.dim for m in models}
    sizes = {m.tree.n_categories for m in models}
    if len(dims) > 1 or len(sizes) > 1:
        raise IncompatibleModelError(f"models disagree on dimension {sorted(dims)} or category count {sorted(sizes)}")


def predict_ensemble(models: Sequence[TreeModel], x, beam: int = 5, weights: Optional[Sequence[float]] = None,
                     renormalize: bool = False) -> Prediction:
    """
    Promedio por categoría de la probabilidad de camino de cada árbol (0 si la categoría
    no sobrevivió al haz de ese árbol). Pesos uniformes salvo que se indiquen.
    """
    check_compatible(models)
    if weights is None:
        w = np.full(len(models), 1.0 / len(models))
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(models),) or np.any(w < 0) or not w.sum() > 0:
            raise UsageError("ensemble weights must be nonnegative, one per model, with a positive sum")
        w = w / w.sum()

    totals: Dict[int, float] = {}
    evaluations = 0
    multiplications = 0
    for weight, model in zip(w, models):
        prediction = predict_nbest(model, x, beam, renormalize)
        evaluations += prediction.classifier_evaluations
        multiplications += prediction.multiplications
        for category, prob in prediction.ranked:
            totals[category] = totals.get(category, 0.0) + weight * prob

    ranked = sorted(((c, p) for c, p in totals.items() if p > 0), key=lambda item: (-item[1], item[0]))
    return Prediction(
        ranked=tuple(ranked),
        log_probs=tuple(math.log(p) for _, p in ranked),
        paths=(),
        classifier_evaluations=evaluations,
        multiplications=multiplications,
    )


def predict(models: Sequence[TreeModel], x, mode: str = "beam", beam: int = 5, renormalize: bool = False) -> Prediction:
    """Despachar por modo: greedy | beam | exhaustive | ensemble (los tres primeros usan el primer árbol)"""
    if mode == "greedy":
        return predict_greedy(models[0], x, renormalize)
    if mode == "beam":
        return predict_nbest(models[0], x, beam, renormalize)
    if mode == "exhaustive":
        return predict_exhaustive(models[0], x, renormalize)
    if mode == "ensemble":
        return predict_ensemble(models, x, beam, renormalize=renormalize)
    raise UsageError(f"unknown prediction mode '{mode}'")
