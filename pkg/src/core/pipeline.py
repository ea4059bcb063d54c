"""
Pipeline - Orquestación de las etapas stats -> affinity -> tree -> train -> predict,
en versión secuencial y asincrónica (ejecutor de hilos + eventos de etapa)
"""
import asyncio
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ArbolError, TrainingError
from .event_bus import STAGE_COMPLETED, STAGE_FAILED, STAGE_STARTED, EventBus
from .seeding import derive_seed
from ..modules.dataio import FeatureDataset, compute_stats, split_folds
from ..modules.infer import Prediction, predict
from ..modules.metric import AffinityMatrix, build_affinity
from ..modules.model_store import ModelBundle
from ..modules.svm import TrainConfig, TreeModel, plan_edges, train_edge
from ..modules.tree import VisualTree, build_tree

logger = logging.getLogger(__name__)

# errores ajenos a ArbolError que una etapa convierte en TrainingError
NUMERIC_ERRORS = (ValueError, FloatingPointError, np.linalg.LinAlgError, MemoryError)


@dataclass(frozen=True)
class BuildSettings:
    """Forma del árbol, afinidad y entrenamiento de un modelo (o ensamble)"""
    branching: int = 32
    depth: int = 2
    n_trees: int = 1
    tuning_k: int = 7
    metric: str = "pairwise"
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def seed(self) -> int:
        return self.train.seed

    def echo(self) -> Dict[str, Any]:
        """Configuración reproducible que se guarda con el modelo"""
        data = asdict(self)
        data["train"] = self.train.to_dict()
        return data


def fold_settings(settings: BuildSettings, fold: int) -> TrainConfig:
    """Semilla propia de cada árbol del ensamble (la del usuario si solo hay uno)"""
    if settings.n_trees == 1:
        return settings.train
    cfg = asdict(settings.train)
    cfg["seed"] = derive_seed(settings.seed, "tree", fold)
    return TrainConfig(**cfg)


def build_structure(dataset: FeatureDataset, settings: BuildSettings, seed: int) -> Tuple[VisualTree, Optional[AffinityMatrix]]:
    """stats -> affinity -> tree para un dataset"""
    if dataset.n_categories == 1:
        return build_tree(AffinityMatrix.single(), settings.branching, settings.depth, seed), None
    stats = compute_stats(dataset)
    affinity = build_affinity(stats, settings.tuning_k, settings.metric)
    means = np.vstack([s.mean for s in stats])
    tree = build_tree(affinity, settings.branching, settings.depth, seed, means=means)
    return tree, affinity


def fit_tree_model(dataset: FeatureDataset, settings: BuildSettings, config: TrainConfig,
                   timings: Optional[Dict[str, float]] = None) -> TreeModel:
    """Construir y entrenar un árbol (secuencial); timings acumula segundos de 'build' y 'train'"""
    start = time.perf_counter()
    tree, _ = build_structure(dataset, settings, config.seed)
    built = time.perf_counter()
    classifiers = tuple(train_edge(job, dataset, config) for job in plan_edges(tree, dataset, config))
    if timings is not None:
        timings["build"] = timings.get("build", 0.0) + built - start
        timings["train"] = timings.get("train", 0.0) + time.perf_counter() - built
    return TreeModel(tree=tree, classifiers=classifiers, dim=dataset.dim)


def fit_bundle(dataset: FeatureDataset, settings: BuildSettings,
               timings: Optional[Dict[str, float]] = None) -> ModelBundle:
    """
    Entrenamiento secuencial completo. Con n_trees > 1 los datos se dividen en n_trees
    folds aleatorios y se entrena un árbol por fold.
    """
    settings.train.validate()
    folds = split_folds(dataset, settings.n_trees, settings.seed)
    models = [fit_tree_model(fold, settings, fold_settings(settings, i), timings)
              for i, (fold, _) in enumerate(folds)]
    return ModelBundle(
        trees=tuple(models),
        category_ids=dataset.category_ids,
        config=settings.echo(),
        folds=tuple(tuple(int(r) for r in rows) for _, rows in folds),
    )


class TrainingPipeline:
    """
    Pipeline asincrónico: cada etapa corre en un ThreadPoolExecutor y se anuncia en el EventBus
    (stage_started / stage_completed / stage_failed). Los árboles de un ensamble y las aristas
    de cada árbol se entrenan en paralelo; el resultado es idéntico a fit_bundle.
    """

    def __init__(self, event_bus: EventBus, settings: BuildSettings, workers: Optional[int] = None):
        self.event_bus = event_bus
        self.settings = settings
        self.workers = workers or None
        self._executor: Optional[ThreadPoolExecutor] = None
        self._stage_count = 0

    async def __aenter__(self) -> "TrainingPipeline":
        self._executor = ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="arbol")
        return self

    async def __aexit__(self, *exc) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    async def _in_executor(self, fn: Callable, *args):
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(self._executor, fn, *args)

    async def run_stage(self, stage: str, fn: Callable, *args, detail: Optional[Dict] = None):
        """Ejecutar una etapa con sus eventos; los errores salen anotados con la etapa"""
        self._stage_count += 1
        info = {"stage": stage, **(detail or {})}
        await self.event_bus.emit(STAGE_STARTED, info, source="pipeline")
        start = time.perf_counter()
        try:
            result = await self._in_executor(fn, *args)
        except ArbolError as e:
            await self.event_bus.emit(STAGE_FAILED, {**info, "error": e.message}, source="pipeline")
            raise e.with_stage(stage)
        except NUMERIC_ERRORS as e:
            await self.event_bus.emit(STAGE_FAILED, {**info, "error": str(e)}, source="pipeline")
            raise TrainingError(str(e), stage=stage) from e
        await self.event_bus.emit(STAGE_COMPLETED, {**info, "seconds": time.perf_counter() - start},
                                  source="pipeline")
        return result

    async def _train_tree(self, index: int, dataset: FeatureDataset) -> TreeModel:
        config = fold_settings(self.settings, index)
        detail = {"tree": index}
        if dataset.n_categories == 1:
            tree, _ = await self.run_stage("tree", build_structure, dataset, self.settings, config.seed, detail=detail)
        else:
            stats = await self.run_stage("stats", compute_stats, dataset, detail=detail)
            affinity = await self.run_stage("affinity", build_affinity, stats, self.settings.tuning_k,
                                            self.settings.metric, detail=detail)
            means = np.vstack([s.mean for s in stats])
            tree = await self.run_stage("tree", build_tree, affinity, self.settings.branching,
                                        self.settings.depth, config.seed, means, detail=detail)

        jobs = await self.run_stage("plan", plan_edges, tree, dataset, config, detail=detail)
        await self.event_bus.emit(STAGE_STARTED, {"stage": "train", "tree": index, "edges": len(jobs)},
                                  source="pipeline")
        start = time.perf_counter()
        try:
            classifiers = await asyncio.gather(*[self._in_executor(train_edge, job, dataset, config) for job in jobs])
        except ArbolError as e:
            await self.event_bus.emit(STAGE_FAILED, {"stage": "train", "tree": index, "error": e.message},
                                      source="pipeline")
            raise e.with_stage("train")
        except NUMERIC_ERRORS as e:
            await self.event_bus.emit(STAGE_FAILED, {"stage": "train", "tree": index, "error": str(e)},
                                      source="pipeline")
            raise TrainingError(str(e), stage="train") from e
        await self.event_bus.emit(STAGE_COMPLETED, {"stage": "train", "tree": index, "edges": len(jobs),
                                                    "seconds": time.perf_counter() - start}, source="pipeline")
        return TreeModel(tree=tree, classifiers=tuple(classifiers), dim=dataset.dim)

    async def train(self, dataset: FeatureDataset) -> ModelBundle:
        """Versión paralela de fit_bundle"""
        self.settings.train.validate()
        folds = await self.run_stage("folds", split_folds, dataset, self.settings.n_trees, self.settings.seed)
        models = await asyncio.gather(*[self._train_tree(i, fold) for i, (fold, _) in enumerate(folds)])
        return ModelBundle(
            trees=tuple(models),
            category_ids=dataset.category_ids,
            config=self.settings.echo(),
            folds=tuple(tuple(int(r) for r in rows) for _, rows in folds),
        )

    async def predict(self, bundle: ModelBundle, queries: np.ndarray, mode: str = "beam", beam: int = 5,
                      renormalize: bool = False, chunk_size: int = 256) -> List[Prediction]:
        """Predicción por lotes: trozos ordenados en paralelo; la salida respeta el orden de entrada"""
        models = bundle.trees

        def run_chunk(rows: np.ndarray) -> List[Prediction]:
            return [predict(models, x, mode, beam, renormalize) for x in rows]

        async def all_chunks() -> List[Prediction]:
            chunks = [queries[i:i + chunk_size] for i in range(0, queries.shape[0], chunk_size)]
            results = await asyncio.gather(*[self._in_executor(run_chunk, c) for c in chunks])
            return [p for chunk in results for p in chunk]

        await self.event_bus.emit(STAGE_STARTED, {"stage": "predict", "queries": int(queries.shape[0])},
                                  source="pipeline")
        start = time.perf_counter()
        try:
            predictions = await all_chunks()
        except ArbolError as e:
            await self.event_bus.emit(STAGE_FAILED, {"stage": "predict", "error": e.message}, source="pipeline")
            raise e.with_stage("predict")
        await self.event_bus.emit(STAGE_COMPLETED, {"stage": "predict", "queries": len(predictions),
                                                    "seconds": time.perf_counter() - start}, source="pipeline")
        return predictions

    def get_statistics(self) -> Dict:
        return {"stages_run": self._stage_count, "workers": self.workers, "settings": self.settings.echo()}
