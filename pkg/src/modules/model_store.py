"""
Model Store - Contenedor binario versionado de modelos (uno o varios árboles entrenados)
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..core.errors import ModelFormatError
from .svm import EdgeClassifier, TreeModel
from .tree import VisualTree, validate_tree

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"HVTM"
MODEL_VERSION = 1
# magic, versión, reservado, longitud de los metadatos JSON
_HEADER = struct.Struct("<4sBBI")


@dataclass(frozen=True, eq=False)
class ModelBundle:
    """
    Uno o más árboles entrenados que comparten D y el mapa de categorías.
    folds guarda las filas de entrenamiento usadas por cada árbol.
    """
    trees: Tuple[TreeModel, ...]
    category_ids: Tuple[int, ...]
    config: Dict[str, Any] = field(default_factory=dict)
    folds: Tuple[Tuple[int, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "category_ids", tuple(int(c) for c in self.category_ids))
        if not self.trees:
            raise ModelFormatError("model bundle holds no trees")
        for model in self.trees:
            if model.dim != self.trees[0].dim or model.tree.n_categories != len(self.category_ids):
                raise ModelFormatError("trees disagree on dimension or category map")

    @property
    def dim(self) -> int:
        return self.trees[0].dim

    @property
    def n_categories(self) -> int:
        return len(self.category_ids)

    @property
    def branching(self) -> int:
        return self.trees[0].tree.branching

    @property
    def depth(self) -> int:
        return self.trees[0].tree.max_depth

    def original_id(self, category: int) -> int:
        return self.category_ids[category]

    def get_statistics(self) -> Dict:
        return {
            "trees": len(self.trees),
            "categories": self.n_categories,
            "dim": self.dim,
            "classifiers": sum(t.n_classifiers for t in self.trees),
        }


def _metadata(bundle: ModelBundle) -> Dict[str, Any]:
    trees = []
    for index, model in enumerate(bundle.trees):
        trees.append({
            "structure": model.tree.to_dict(),
            "fold_rows": list(bundle.folds[index]) if index < len(bundle.folds) else [],
            "edges": [
                {"node": c.node, "child": c.child_index,
                 "objective": None if np.isnan(c.objective) else float(c.objective),
                 "train_accuracy": None if np.isnan(c.train_accuracy) else float(c.train_accuracy)}
                for c in model.classifiers
            ],
        })
    return {
        "K": bundle.branching,
        "L": bundle.depth,
        "N": bundle.n_categories,
        "D": bundle.dim,
        "category_ids": list(bundle.category_ids),
        "config": bundle.config,
        "trees": trees,
    }


def dump_bundle(bundle: ModelBundle) -> bytes:
    """Serializar: cabecera, metadatos JSON y pesos/bias float32 little-endian por arista"""
    meta = json.dumps(_metadata(bundle), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, 0, len(meta)), meta]
    for model in bundle.trees:
        for clf in model.classifiers:
            parts.append(np.asarray(clf.weights, dtype="<f4").tobytes())
            parts.append(struct.pack("<f", clf.bias))
    return b"".join(parts)


def parse_bundle(blob: bytes) -> ModelBundle:
    """Reconstruir un ModelBundle; valida cabecera, tamaños y la estructura de cada árbol"""
    if len(blob) < _HEADER.size:
        raise ModelFormatError("truncated model header")
    magic, version, _, meta_len = _HEADER.unpack_from(blob, 0)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"bad model magic {magic!r}")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    offset = _HEADER.size
    if len(blob) < offset + meta_len:
        raise ModelFormatError("truncated model metadata")
    try:
        meta = json.loads(blob[offset:offset + meta_len].decode("utf-8"))
        dim = int(meta["D"])
        category_ids = tuple(int(c) for c in meta["category_ids"])
        tree_entries = meta["trees"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"unreadable model metadata: {e}") from None
    offset += meta_len

    edge_dtype = np.dtype([("w", "<f4", (dim,)), ("b", "<f4")])
    trees: List[TreeModel] = []
    folds: List[Tuple[int, ...]] = []
    for index, entry in enumerate(tree_entries):
        tree = VisualTree.from_dict(entry["structure"])
        violations = validate_tree(tree)
        if violations:
            raise ModelFormatError(f"tree {index} is invalid: {violations[0]}")
        edges = tree.edges()
        size = len(edges) * edge_dtype.itemsize
        if len(blob) < offset + size:
            raise ModelFormatError(f"tree {index}: weight block truncated")
        block = np.frombuffer(blob, dtype=edge_dtype, count=len(edges), offset=offset)
        offset += size

        stats = entry.get("edges", [])
        classifiers = []
        for e, (node_id, child_index) in enumerate(edges):
            info = stats[e] if e < len(stats) else {}
            weights = np.array(block["w"][e], dtype=np.float32)
            weights.setflags(write=False)
            classifiers.append(EdgeClassifier(
                node=node_id, child_index=child_index, weights=weights, bias=float(block["b"][e]),
                objective=float("nan") if info.get("objective") is None else float(info["objective"]),
                train_accuracy=float("nan") if info.get("train_accuracy") is None else float(info["train_accuracy"]),
            ))
        trees.append(TreeModel(tree=tree, classifiers=tuple(classifiers), dim=dim))
        folds.append(tuple(int(r) for r in entry.get("fold_rows", [])))

    if offset != len(blob):
        raise ModelFormatError(f"{len(blob) - offset} trailing bytes after the weight blocks")
    return ModelBundle(trees=tuple(trees), category_ids=category_ids,
                       config=meta.get("config", {}), folds=tuple(folds))


def save_bundle(bundle: ModelBundle, path) -> Path:
    path = Path(path)
    blob = dump_bundle(bundle)
    path.write_bytes(blob)
    logger.info("saved model %s (%d bytes, %s)", path, len(blob), bundle.get_statistics())
    return path


def load_bundle(path) -> ModelBundle:
    path = Path(path)
    try:
        bundle = parse_bundle(path.read_bytes())
    except ModelFormatError as e:
        raise ModelFormatError(f"{path}: {e.message}") from None
    logger.info("loaded model %s: %s", path, bundle.get_statistics())
    return bundle


def describe_bundle(bundle: ModelBundle, tree_index: Optional[int] = None) -> Dict:
    """Resumen legible del contenedor (o de uno de sus árboles)"""
    if tree_index is None:
        info = bundle.get_statistics()
        info["shapes"] = [t.tree.get_statistics() for t in bundle.trees]
        return info
    return bundle.trees[tree_index].get_statistics()
