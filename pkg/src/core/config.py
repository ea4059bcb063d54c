"""
Config - Configuración tipada de una ejecución del CLI (defaults, archivo JSON, flags)
"""
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from .errors import UsageError

logger = logging.getLogger(__name__)

MODES = ("greedy", "beam", "exhaustive", "ensemble")
METRICS = ("pairwise", "mean")


@dataclass
class CliConfig:
    """Parámetros compartidos por los subcomandos; los defaults corresponden a T_{32,2} con Q=5"""
    subcommand: Optional[str] = None
    data: Optional[str] = None
    format: Optional[str] = None
    model: Optional[str] = None
    queries: Optional[str] = None
    out: Optional[str] = None

    # árbol y entrenamiento
    branching: int = 32
    depth: int = 2
    beam: int = 5
    mode: str = "beam"
    trees: int = 1
    lam: float = 1e-4
    epochs: int = 30
    root_subsample: int = 600
    tuning_k: int = 7
    seed: int = 0
    metric: str = "pairwise"
    normalize: bool = False
    fit_bias: bool = True
    balance: bool = False
    batch_size: int = 64
    workers: int = 0

    # predicción / exportación
    top: int = 5
    unlabeled: bool = False
    names: Optional[str] = None
    tree_index: int = 0

    # evaluación / benchmark
    train_per_class: Optional[int] = None
    test_per_class: Optional[int] = None
    repetitions: int = 3
    sweep: List[str] = field(default_factory=list)
    flat: bool = False
    plot: Optional[str] = None

    # generador sintético
    categories: int = 16
    per_class: int = 50
    dim: int = 16
    hier_branching: int = 4
    noise: float = 1.0

    # logging
    verbose: bool = False
    log_file: Optional[str] = None

    def validate(self) -> "CliConfig":
        """Comprobar rangos y coherencia; lanza UsageError"""
        if self.branching < 2:
            raise UsageError("--branching must be >= 2")
        if self.depth < 1:
            raise UsageError("--depth must be >= 1")
        if self.beam < 1:
            raise UsageError("--beam must be >= 1")
        if self.trees < 1:
            raise UsageError("--trees must be >= 1")
        if not self.lam > 0:
            raise UsageError("--lambda must be > 0")
        if self.epochs < 1:
            raise UsageError("--epochs must be >= 1")
        if self.root_subsample < 1:
            raise UsageError("--root-subsample must be >= 1")
        if self.tuning_k < 1:
            raise UsageError("--tuning-k must be >= 1")
        if self.batch_size < 1:
            raise UsageError("--batch-size must be >= 1")
        if self.top < 1:
            raise UsageError("--top must be >= 1")
        if self.repetitions < 1:
            raise UsageError("--repetitions must be >= 1")
        if self.mode not in MODES:
            raise UsageError(f"--mode must be one of {', '.join(MODES)}")
        if self.metric not in METRICS:
            raise UsageError(f"--metric must be one of {', '.join(METRICS)}")
        if self.format is not None and self.format not in ("csv", "bin", "binary"):
            raise UsageError("--format must be csv or bin")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def field_names() -> List[str]:
    return [f.name for f in fields(CliConfig)]


def load_config_file(path) -> Dict[str, Any]:
    """Leer un archivo JSON de configuración; claves desconocidas son error de uso"""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON config ({e.msg} at line {e.lineno})") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")

    known = set(field_names())
    # alias legible para el parámetro de regularización
    if "lambda" in data:
        data["lam"] = data.pop("lambda")
    unknown = sorted(set(data) - known)
    if unknown:
        raise UsageError(f"{path}: unknown config keys: {', '.join(unknown)}")
    logger.debug("loaded config file %s (%d keys)", path, len(data))
    return data


def merge_config(file_values: Dict[str, Any], explicit: Dict[str, Any]) -> CliConfig:
    """
    Combinar defaults < archivo de configuración < flags explícitos.
    `explicit` contiene solo los flags que el usuario escribió.
    """
    config = replace(CliConfig(), **file_values)
    config = replace(config, **explicit)
    return config.validate()
