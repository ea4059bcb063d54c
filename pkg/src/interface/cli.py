"""
CLI - Línea de comandos de ArbolVisual: synth, train, predict, eval, bench, export-dot
"""
import argparse
import asyncio
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from ..core.config import METRICS, MODES, CliConfig, load_config_file, merge_config
from ..core.errors import EXIT_IO, EXIT_OK, ArbolError, DataFormatError, DimensionError, UsageError
from ..core.event_bus import EventBus
from ..core.pipeline import BuildSettings, TrainingPipeline
from ..modules.dataio import (SynthConfig, FeatureDataset, generate_synthetic, l2_normalize, load_category_names,
                              load_dataset, load_queries, save_dataset)
from ..modules.evaluation import SweepConfig, evaluate_model, run_benchmark
from ..modules.model_store import ModelBundle, describe_bundle, load_bundle, save_bundle
from ..modules.svm import TrainConfig
from ..modules.tree import export_dot
from .recorder import StageRecorder

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(verbose: bool = False, log_file: Optional[str] = None) -> None:
    """Logging a stderr (DEBUG con --verbose, WARNING por defecto) y opcionalmente a archivo"""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format=LOG_FORMAT,
                        handlers=handlers, force=True)


def _require(config: CliConfig, *names: str) -> None:
    for name in names:
        if getattr(config, name) is None:
            raise UsageError(f"{config.subcommand} requires --{name.replace('_', '-')}")


def _write_output(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
        logger.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def build_settings(config: CliConfig) -> BuildSettings:
    train = TrainConfig(lam=config.lam, epochs=config.epochs, root_subsample=config.root_subsample,
                        seed=config.seed, batch_size=config.batch_size, fit_bias=config.fit_bias,
                        balance_classes=config.balance)
    return BuildSettings(branching=config.branching, depth=config.depth, n_trees=config.trees,
                         tuning_k=config.tuning_k, metric=config.metric, train=train)


def _training_data(config: CliConfig) -> FeatureDataset:
    dataset = load_dataset(config.data, config.format)
    return l2_normalize(dataset) if config.normalize else dataset


def _dense_labels(bundle: ModelBundle, labels: np.ndarray) -> np.ndarray:
    index = {c: i for i, c in enumerate(bundle.category_ids)}
    try:
        return np.array([index[int(l)] for l in labels], dtype=np.int64)
    except KeyError as e:
        raise DataFormatError(f"label {e.args[0]} is not a category of the model") from None


def _queries(config: CliConfig, bundle: ModelBundle, path: str, labeled: bool):
    X, labels = load_queries(path, config.format, labeled=labeled)
    if X.shape[1] != bundle.dim:
        raise DimensionError(f"queries have D={X.shape[1]}, model expects D={bundle.dim}")
    X = X.astype(np.float64)
    if bundle.config.get("normalize"):
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        np.divide(X, norms, out=X, where=norms > 0)
    return X, labels


# -------------------------
# Subcomandos
# -------------------------

def cmd_synth(config: CliConfig) -> int:
    """Generar un dataset sintético con jerarquía plantada"""
    out = config.out or config.data
    if out is None:
        raise UsageError("synth requires --out")
    synth = SynthConfig(n_categories=config.categories, samples_per_category=config.per_class, dim=config.dim,
                        hierarchy_branching=config.hier_branching, noise_scale=config.noise, seed=config.seed)
    dataset = generate_synthetic(synth)
    save_dataset(dataset, out, config.format)
    print(f"wrote {out}: m={dataset.n_samples} D={dataset.dim} N={dataset.n_categories}")
    return EXIT_OK


async def _train_async(config: CliConfig, dataset: FeatureDataset) -> ModelBundle:
    bus = EventBus()
    recorder = StageRecorder(bus)
    async with TrainingPipeline(bus, build_settings(config), workers=config.workers) as pipeline:
        bundle = await pipeline.train(dataset)
    logger.debug("stage statistics: %s", recorder.get_statistics()["stages"])
    return bundle


def cmd_train(config: CliConfig) -> int:
    """stats -> affinity -> árbol(es) -> clasificadores -> contenedor de modelo"""
    _require(config, "data", "model")
    dataset = _training_data(config)
    bundle = asyncio.run(_train_async(config, dataset))
    bundle = replace(bundle, config={**bundle.config, "normalize": config.normalize})
    save_bundle(bundle, config.model)
    print(f"wrote {config.model}: {json.dumps(describe_bundle(bundle), sort_keys=True)}")
    return EXIT_OK


async def _predict_async(config: CliConfig, bundle: ModelBundle, X: np.ndarray):
    bus = EventBus()
    StageRecorder(bus)
    settings = build_settings(config)
    async with TrainingPipeline(bus, settings, workers=config.workers) as pipeline:
        return await pipeline.predict(bundle, X, config.mode, config.beam)


def cmd_predict(config: CliConfig) -> int:
    """Una línea JSON por consulta con los ids originales mejor clasificados"""
    _require(config, "model")
    path = config.queries or config.data
    if path is None:
        raise UsageError("predict requires --queries (or --data)")
    bundle = load_bundle(config.model)
    X, _ = _queries(config, bundle, path, labeled=not config.unlabeled)
    predictions = asyncio.run(_predict_async(config, bundle, X))

    lines = []
    for i, prediction in enumerate(predictions):
        record = {
            "query": i,
            "mode": config.mode,
            "ranked": [[bundle.original_id(c), p] for c, p in prediction.ranked[:config.top]],
            "classifier_evaluations": prediction.classifier_evaluations,
        }
        lines.append(json.dumps(record) + "\n")
    _write_output("".join(lines), config.out)
    return EXIT_OK


def cmd_eval(config: CliConfig) -> int:
    """Precisión top-1/top-5 y coste de un modelo sobre un conjunto etiquetado"""
    _require(config, "model")
    path = config.queries or config.data
    if path is None:
        raise UsageError("eval requires --data")
    bundle = load_bundle(config.model)
    X, labels = _queries(config, bundle, path, labeled=True)
    report = evaluate_model(bundle, X, _dense_labels(bundle, labels), config.mode, config.beam)
    sys.stdout.write(report.table())
    if config.out:
        Path(config.out).write_text(report.to_jsonl(), encoding="utf-8")
    return EXIT_OK


def cmd_bench(config: CliConfig) -> int:
    """Barrido de configuraciones greedy / beam / exhaustivo / ensamble (y baseline plano)"""
    _require(config, "data")
    dataset = _training_data(config)
    if config.sweep:
        sweep = [SweepConfig.parse(entry) for entry in config.sweep]
    else:
        sweep = [SweepConfig(config.branching, config.depth, config.beam, config.trees)]
    settings = build_settings(config)
    report = run_benchmark(dataset, sweep, seed=config.seed, repetitions=config.repetitions,
                           train_per_class=config.train_per_class, test_per_class=config.test_per_class,
                           include_flat=config.flat, train_config=settings.train, tuning_k=config.tuning_k,
                           metric=config.metric, progress=config.verbose)
    sys.stdout.write(report.table())
    if config.out:
        Path(config.out).write_text(report.to_jsonl(), encoding="utf-8")
    if config.plot:
        from ..modules.plotting import plot_benchmark
        plot_benchmark(report, config.plot)
    return EXIT_OK


def cmd_export_dot(config: CliConfig) -> int:
    """Exportar un árbol del modelo en formato DOT"""
    _require(config, "model")
    bundle = load_bundle(config.model)
    if not 0 <= config.tree_index < len(bundle.trees):
        raise UsageError(f"--tree-index must lie in [0, {len(bundle.trees)})")
    names = load_category_names(config.names) if config.names else None
    text = export_dot(bundle.trees[config.tree_index].tree, names, bundle.category_ids)
    _write_output(text, config.out)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[CliConfig], int]] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "export-dot": cmd_export_dot,
}


def build_parser() -> argparse.ArgumentParser:
    """Parser con subcomandos; los flags no escritos no aparecen en el Namespace"""
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False, argument_default=S)
    io = common.add_argument_group("datos y archivos")
    io.add_argument("--config", help="archivo JSON con valores por defecto")
    io.add_argument("--data", help="dataset (CSV o binario)")
    io.add_argument("--queries", help="consultas para predict/eval (por defecto --data)")
    io.add_argument("--format", choices=["csv", "bin", "binary"], help="formato de los datos")
    io.add_argument("--model", help="contenedor de modelo")
    io.add_argument("--out", help="archivo de salida")
    io.add_argument("--names", help="mapa id,nombre para export-dot")
    io.add_argument("--unlabeled", action="store_true", help="CSV de consultas sin columna de etiqueta")

    tree = common.add_argument_group("árbol y entrenamiento")
    tree.add_argument("--branching", type=int, help="K, hijos máximos por nodo (32)")
    tree.add_argument("--depth", type=int, help="L, profundidad del árbol (2)")
    tree.add_argument("--beam", type=int, help="Q, ancho del haz (5)")
    tree.add_argument("--mode", choices=MODES, help="modo de predicción (beam)")
    tree.add_argument("--trees", type=int, help="árboles del ensamble (1)")
    tree.add_argument("--lambda", dest="lam", type=float, help="regularización L2 (1e-4)")
    tree.add_argument("--epochs", type=int, help="épocas del SVM (30)")
    tree.add_argument("--root-subsample", type=int, help="máximo de filas por categoría en la raíz (600)")
    tree.add_argument("--tuning-k", type=int, help="vecino usado para el ancho de banda (7)")
    tree.add_argument("--seed", type=int, help="semilla (0)")
    tree.add_argument("--metric", choices=METRICS, help="distancia entre categorías (pairwise)")
    tree.add_argument("--normalize", action="store_true", help="normalizar filas a norma L2 unitaria")
    tree.add_argument("--no-bias", dest="fit_bias", action="store_false", help="clasificadores sin bias")
    tree.add_argument("--balance", action="store_true", help="pesos por tamaño de clase en cada arista")
    tree.add_argument("--batch-size", type=int, help="tamaño de mini-lote (64)")
    tree.add_argument("--workers", type=int, help="hilos del pipeline (0 = automático)")

    ev = common.add_argument_group("predicción y evaluación")
    ev.add_argument("--top", type=int, help="entradas por consulta en predict (5)")
    ev.add_argument("--tree-index", type=int, help="árbol a exportar (0)")
    ev.add_argument("--sweep", nargs="+", help="configuraciones K:L[:Q[:M]]")
    ev.add_argument("--train-per-class", type=int, help="filas de entrenamiento por categoría")
    ev.add_argument("--test-per-class", type=int, help="filas de prueba por categoría")
    ev.add_argument("--repetitions", type=int, help="divisiones aleatorias promediadas (3)")
    ev.add_argument("--flat", action="store_true", help="incluir el baseline plano one-vs-rest")
    ev.add_argument("--plot", help="guardar gráfico del benchmark")

    synth = common.add_argument_group("generador sintético")
    synth.add_argument("--categories", type=int, help="número de categorías (16)")
    synth.add_argument("--per-class", type=int, help="muestras por categoría (50)")
    synth.add_argument("--dim", type=int, help="dimensión D (16)")
    synth.add_argument("--hier-branching", type=int, help="fan-out de la jerarquía plantada (4)")
    synth.add_argument("--noise", type=float, help="desviación del ruido por coordenada (1.0)")

    logs = common.add_argument_group("logging")
    logs.add_argument("--verbose", "-v", action="store_true", help="logging DEBUG y barras de progreso")
    logs.add_argument("--log-file", help="copiar el log a un archivo")

    parser = argparse.ArgumentParser(prog="arbol", description="Árboles visuales jerárquicos para clasificación")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or "").strip().splitlines()[0])
    return parser


def parse_config(argv: Optional[List[str]] = None) -> CliConfig:
    """Defaults < --config JSON < flags explícitos"""
    args = vars(build_parser().parse_args(argv))
    subcommand = args.pop("subcommand")
    file_values = load_config_file(args.pop("config")) if "config" in args else {}
    file_values.pop("subcommand", None)
    return merge_config(file_values, {**args, "subcommand": subcommand})


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    try:
        config = parse_config(argv)
    except SystemExit as e:
        return int(e.code or 0)
    except ArbolError as e:
        logger.error("%s", e)
        return e.exit_code
    except OSError as e:
        logger.error("%s", e)
        return EXIT_IO

    try:
        configure_logging(config.verbose, config.log_file)
        return COMMANDS[config.subcommand](config)
    except ArbolError as e:
        logger.error("%s failed: %s", config.subcommand, e)
        return e.exit_code
    except OSError as e:
        logger.error("%s failed: %s", config.subcommand, e)
        return EXIT_IO
