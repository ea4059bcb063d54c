"""
Evaluation - Precisión top-k, baseline plano one-vs-rest y banco de pruebas
greedy vs beam vs exhaustivo vs ensamble sobre barridos de (K, L, Q, árboles)
"""
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from ..core.errors import DimensionError, UsageError
from ..core.pipeline import BuildSettings, fit_bundle
from ..core.seeding import derive_rng, derive_seed
from .dataio import FeatureDataset, split_per_class
from .infer import Prediction, log_edge_probabilities, predict_ensemble, predict_exhaustive, predict_greedy, predict_nbest
from .model_store import ModelBundle
from .svm import EdgeClassifier, TrainConfig, train_linear_svm

logger = logging.getLogger(__name__)

EXHAUSTIVE_LEAF_LIMIT = 4096
TIMING_FIELDS = ("median_query_seconds", "build_seconds", "train_seconds")


def topk_accuracy(predictions: Sequence[Sequence[int]], truths: Sequence[int], k: int) -> float:
    """Fracción de consultas cuya categoría verdadera está entre las k primeras del ranking"""
    if len(predictions) != len(truths):
        raise DimensionError(f"{len(predictions)} predictions for {len(truths)} truths")
    if k < 1:
        raise UsageError("k must be >= 1")
    if len(truths) == 0:
        return 0.0
    hits = sum(1 for ranked, truth in zip(predictions, truths) if truth in list(ranked)[:k])
    return hits / len(truths)


# -------------------------
# Baseline plano
# -------------------------

@dataclass(frozen=True, eq=False)
class FlatModel:
    """N clasificadores one-vs-rest; se predice la categoría de mayor confianza"""
    classifiers: Tuple[EdgeClassifier, ...]
    dim: int

    @property
    def n_categories(self) -> int:
        return len(self.classifiers)

    def scores(self, x: np.ndarray) -> np.ndarray:
        W = np.vstack([np.asarray(c.weights, dtype=np.float64) for c in self.classifiers])
        b = np.array([c.bias for c in self.classifiers])
        return W @ x + b


def train_flat_baseline(dataset: FeatureDataset, config: TrainConfig) -> FlatModel:
    """Un clasificador por categoría; cada categoría aporta como mucho root_subsample filas"""
    config.validate()
    if dataset.n_categories < 2:
        raise UsageError("flat baseline needs at least two categories")
    capped = []
    for c, rows in enumerate(dataset.category_index):
        if rows.size > config.root_subsample:
            rows = np.sort(derive_rng(config.seed, "root_subsample", c).choice(rows, config.root_subsample, replace=False))
        capped.append(rows)

    classifiers = []
    for c in range(dataset.n_categories):
        negatives = np.concatenate([r for j, r in enumerate(capped) if j != c])
        classifiers.append(train_linear_svm(dataset.features[capped[c]], dataset.features[negatives], config,
                                            seed=derive_seed(config.seed, "flat", c), node=-1, child_index=c))
    logger.info("trained flat baseline with %d classifiers", len(classifiers))
    return FlatModel(classifiers=tuple(classifiers), dim=dataset.dim)


def predict_flat(model: FlatModel, x) -> Prediction:
    query = np.asarray(x, dtype=np.float64)
    if query.shape != (model.dim,):
        raise DimensionError(f"query has shape {query.shape}, model expects ({model.dim},)")
    scores = model.scores(query)
    order = np.lexsort((np.arange(scores.size), -scores))
    logp = log_edge_probabilities(scores)
    return Prediction(
        ranked=tuple((int(c), math.exp(logp[c])) for c in order),
        log_probs=tuple(float(logp[c]) for c in order),
        paths=(),
        classifier_evaluations=model.n_categories,
        multiplications=0,
    )


# -------------------------
# Informes
# -------------------------

@dataclass(frozen=True)
class SweepConfig:
    """Una configuración del barrido: T_{K,L}, ancho de haz Q y número de árboles"""
    branching: int
    depth: int
    beam: int = 5
    n_trees: int = 1

    @classmethod
    def parse(cls, text: str) -> "SweepConfig":
        """'K:L[:Q[:M]]', p.ej. '8:2:5:1'"""
        try:
            parts = [int(p) for p in text.split(":")]
        except ValueError:
            raise UsageError(f"invalid sweep entry '{text}', expected K:L[:Q[:M]]") from None
        if not 2 <= len(parts) <= 4:
            raise UsageError(f"invalid sweep entry '{text}', expected K:L[:Q[:M]]")
        config = cls(*parts)
        if config.branching < 2 or config.depth < 1 or config.beam < 1 or config.n_trees < 1:
            raise UsageError(f"invalid sweep entry '{text}'")
        return config

    @property
    def label(self) -> str:
        return f"T{self.branching},{self.depth} Q={self.beam} M={self.n_trees}"


@dataclass
class EvalRow:
    """Métricas agregadas de un método sobre una configuración"""
    config: str
    method: str
    branching: Optional[int]
    depth: Optional[int]
    beam: Optional[int]
    n_trees: Optional[int]
    n_queries: int
    top1: float
    top5: float
    mean_evaluations: float
    max_evaluations: int
    median_query_seconds: float
    budget: Optional[int] = None
    beam_ge_greedy: Optional[float] = None
    nodes: Optional[int] = None
    max_fanout: Optional[int] = None
    build_seconds: float = 0.0
    train_seconds: float = 0.0

    def to_dict(self, include_timing: bool = True) -> Dict:
        data = asdict(self)
        if not include_timing:
            for name in TIMING_FIELDS:
                data.pop(name)
        return data


@dataclass
class EvalReport:
    """Filas por configuración y método; el resumen es la primera fila beam (o la primera)"""
    rows: List[EvalRow] = field(default_factory=list)

    @property
    def primary(self) -> EvalRow:
        if not self.rows:
            raise UsageError("empty report")
        return next((r for r in self.rows if r.method == "beam"), self.rows[0])

    @property
    def top1(self) -> float:
        return self.primary.top1

    @property
    def top5(self) -> float:
        return self.primary.top5

    @property
    def mean_evaluations(self) -> float:
        return self.primary.mean_evaluations

    @property
    def query_seconds(self) -> float:
        return self.primary.median_query_seconds

    def row(self, config: str, method: str) -> EvalRow:
        for r in self.rows:
            if r.config == config and r.method == method:
                return r
        raise KeyError((config, method))

    def to_jsonl(self, include_timing: bool = True) -> str:
        return "".join(json.dumps(r.to_dict(include_timing), sort_keys=True) + "\n" for r in self.rows)

    def table(self) -> str:
        header = f"{'config':<22} {'method':<11} {'top1':>7} {'top5':>7} {'evals':>9} {'max':>6} {'budget':>7} {'ms/q':>8}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            budget = "-" if r.budget is None else str(r.budget)
            lines.append(
                f"{r.config:<22} {r.method:<11} {r.top1:>7.4f} {r.top5:>7.4f} {r.mean_evaluations:>9.1f} "
                f"{r.max_evaluations:>6d} {budget:>7} {1000 * r.median_query_seconds:>8.3f}"
            )
        return "\n".join(lines) + "\n"


@dataclass
class _Run:
    """Resultados por consulta de un método en una repetición"""
    predictions: List[Prediction]
    seconds: List[float]


def _run_queries(fn: Callable[[np.ndarray], Prediction], X: np.ndarray) -> _Run:
    predictions, seconds = [], []
    for x in X:
        start = time.perf_counter()
        predictions.append(fn(x))
        seconds.append(time.perf_counter() - start)
    return _Run(predictions, seconds)


def _summarize(config: str, method: str, sweep: Optional[SweepConfig], runs: List[_Run],
               truths: List[np.ndarray], **extra) -> EvalRow:
    top1 = [topk_accuracy([p.labels for p in run.predictions], list(y), 1) for run, y in zip(runs, truths)]
    top5 = [topk_accuracy([p.labels for p in run.predictions], list(y), 5) for run, y in zip(runs, truths)]
    evals = [p.classifier_evaluations for run in runs for p in run.predictions]
    seconds = [s for run in runs for s in run.seconds]
    return EvalRow(
        config=config,
        method=method,
        branching=sweep.branching if sweep else None,
        depth=sweep.depth if sweep else None,
        beam=sweep.beam if sweep else None,
        n_trees=sweep.n_trees if sweep else None,
        n_queries=len(evals),
        top1=float(np.mean(top1)),
        top5=float(np.mean(top5)),
        mean_evaluations=float(np.mean(evals)) if evals else 0.0,
        max_evaluations=int(max(evals)) if evals else 0,
        median_query_seconds=float(np.median(seconds)) if seconds else 0.0,
        **extra,
    )


def evaluate_model(bundle: ModelBundle, X: np.ndarray, y: Sequence[int], mode: str = "beam",
                   beam: int = 5, renormalize: bool = False) -> EvalReport:
    """Evaluar un modelo entrenado sobre consultas etiquetadas (etiquetas densas)"""
    X = np.asarray(X, dtype=np.float64)
    truths = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != truths.size:
        raise DimensionError("queries and labels disagree in length")
    models = bundle.trees
    predictors = {
        "greedy": lambda x: predict_greedy(models[0], x, renormalize),
        "beam": lambda x: predict_nbest(models[0], x, beam, renormalize),
        "exhaustive": lambda x: predict_exhaustive(models[0], x, renormalize),
        "ensemble": lambda x: predict_ensemble(models, x, beam, renormalize=renormalize),
    }
    if mode not in predictors:
        raise UsageError(f"unknown prediction mode '{mode}'")
    sweep = SweepConfig(bundle.branching, bundle.depth, beam, len(models))
    run = _run_queries(predictors[mode], X)
    tree = models[0].tree
    row = _summarize(sweep.label, mode, sweep, [run], [truths],
                     budget=tree.beam_budget(beam) if mode == "beam" else None,
                     nodes=len(tree.nodes), max_fanout=tree.max_fanout())
    return EvalReport(rows=[row])


def run_benchmark(dataset: FeatureDataset, sweep: Sequence[SweepConfig], seed: int = 0, repetitions: int = 3,
                  train_per_class: Optional[int] = None, test_per_class: Optional[int] = None,
                  include_flat: bool = False, train_config: Optional[TrainConfig] = None, tuning_k: int = 7,
                  metric: str = "pairwise", renormalize: bool = False,
                  exhaustive_limit: int = EXHAUSTIVE_LEAF_LIMIT, progress: bool = False) -> EvalReport:
    """
    Para cada repetición se hace una división entrenamiento/prueba por categoría; para cada
    configuración se construyen y entrenan los árboles y se evalúan greedy, beam, exhaustivo
    (si hay <= exhaustive_limit hojas) y el ensamble. Las métricas se promedian entre repeticiones.
    """
    if not sweep:
        raise UsageError("benchmark sweep is empty")
    if repetitions < 1:
        raise UsageError("repetitions must be >= 1")
    base = (train_config or TrainConfig()).validate()

    runs: Dict[Tuple[str, str], List[_Run]] = {}
    truths: Dict[Tuple[str, str], List[np.ndarray]] = {}
    extras: Dict[Tuple[str, str], Dict[str, List]] = {}
    order: List[Tuple[str, str, Optional[SweepConfig]]] = []

    def record(cfg: Optional[SweepConfig], label: str, method: str, run: _Run, y: np.ndarray, **extra):
        key = (label, method)
        if key not in runs:
            runs[key], truths[key], extras[key] = [], [], {}
            order.append((label, method, cfg))
        runs[key].append(run)
        truths[key].append(y)
        for name, value in extra.items():
            extras[key].setdefault(name, []).append(value)

    total = repetitions * (len(sweep) + (1 if include_flat else 0))
    with tqdm(total=total, desc="bench", unit="config", disable=not progress) as bar:
        for rep in range(repetitions):
            split = split_per_class(dataset, train_per_class, test_per_class, derive_seed(seed, "repetition", rep))
            X, y = split.test_features.astype(np.float64), split.test_labels
            if X.shape[0] == 0:
                raise UsageError("benchmark split left no test queries")
            rep_config = replace(base, seed=derive_seed(seed, "bench", rep))

            for cfg in sweep:
                settings = BuildSettings(branching=cfg.branching, depth=cfg.depth, n_trees=cfg.n_trees,
                                         tuning_k=tuning_k, metric=metric, train=rep_config)
                timings: Dict[str, float] = {}
                bundle = fit_bundle(split.train, settings, timings)
                model = bundle.trees[0]
                tree = model.tree
                shape = {"nodes": len(tree.nodes), "max_fanout": tree.max_fanout(),
                         "build": timings.get("build", 0.0), "train": timings.get("train", 0.0)}

                greedy = _run_queries(lambda x: predict_greedy(model, x, renormalize), X)
                beam = _run_queries(lambda x: predict_nbest(model, x, cfg.beam, renormalize), X)
                ge = float(np.mean([b.top_log_prob >= g.top_log_prob
                                    for b, g in zip(beam.predictions, greedy.predictions)]))
                record(cfg, cfg.label, "greedy", greedy, y, **shape)
                record(cfg, cfg.label, "beam", beam, y, beam_ge_greedy=ge, budget=tree.beam_budget(cfg.beam), **shape)
                if len(tree.leaves()) <= exhaustive_limit:
                    record(cfg, cfg.label, "exhaustive",
                           _run_queries(lambda x: predict_exhaustive(model, x, renormalize), X), y, **shape)
                if cfg.n_trees > 1:
                    record(cfg, cfg.label, "ensemble",
                           _run_queries(lambda x: predict_ensemble(bundle.trees, x, cfg.beam, renormalize=renormalize), X),
                           y, **shape)
                    singles = [_run_queries(lambda x, m=m: predict_nbest(m, x, cfg.beam, renormalize), X)
                               for m in bundle.trees]
                    merged = _Run(
                        predictions=[p for s in singles for p in s.predictions],
                        seconds=[t for s in singles for t in s.seconds],
                    )
                    record(cfg, cfg.label, "beam_single", merged, np.tile(y, len(singles)), **shape)
                bar.update(1)

            if include_flat:
                start = time.perf_counter()
                flat = train_flat_baseline(split.train, rep_config)
                trained = time.perf_counter() - start
                record(None, "flat", "flat", _run_queries(lambda x: predict_flat(flat, x), X), y,
                       build=0.0, train=trained)
                bar.update(1)

    rows = []
    for label, method, cfg in order:
        key = (label, method)
        ex = extras[key]
        kwargs = {
            "build_seconds": float(np.mean(ex.get("build", [0.0]))),
            "train_seconds": float(np.mean(ex.get("train", [0.0]))),
        }
        if "nodes" in ex:
            kwargs["nodes"] = int(ex["nodes"][0])
            kwargs["max_fanout"] = int(max(ex["max_fanout"]))
        if "budget" in ex:
            kwargs["budget"] = int(max(ex["budget"]))
        if "beam_ge_greedy" in ex:
            kwargs["beam_ge_greedy"] = float(np.mean(ex["beam_ge_greedy"]))
        rows.append(_summarize(label, method, cfg, runs[key], truths[key], **kwargs))
        logger.info("%s %s: top1=%.4f top5=%.4f evals=%.1f", label, method, rows[-1].top1, rows[-1].top5,
                    rows[-1].mean_evaluations)
    return EvalReport(rows=rows)
