"""Módulos numéricos: datos, métrica, espectral, árbol, SVM, inferencia y persistencia"""

from .dataio import FeatureDataset, compute_stats, generate_synthetic, load_dataset
from .infer import predict_ensemble, predict_exhaustive, predict_greedy, predict_nbest
from .metric import build_affinity
from .model_store import ModelBundle, load_bundle, save_bundle
from .svm import TrainConfig, TreeModel, train_tree_model
from .tree import VisualTree, build_tree, validate_tree

__all__ = [
    "FeatureDataset", "compute_stats", "generate_synthetic", "load_dataset",
    "predict_ensemble", "predict_exhaustive", "predict_greedy", "predict_nbest",
    "build_affinity", "ModelBundle", "load_bundle", "save_bundle",
    "TrainConfig", "TreeModel", "train_tree_model",
    "VisualTree", "build_tree", "validate_tree",
]
