"""Five-class cell classification: balancing, a small CNN, training, ensembling and metrics."""

from .backends import Backend, ReplayBackend, load_backend, patch_key
from .cnn import CnnConfig, TinyCnn, backward, forward
from .data import (CLASS_NAMES, N_CLASSES, CellType, LabeledPatch, balance_bootstrap, balance_downsample,
                   class_counts, class_weights)
from .ensemble import ensemble_predict, ensemble_predict_batch
from .metrics import ClassReport, classification_report, confusion_from_rates, confusion_matrix, f_measure
from .train import MEMBER_WIDTHS, TrainConfig, TrainingDiverged, member_seeds, train, train_ensemble

__all__ = [
    "Backend", "ReplayBackend", "load_backend", "patch_key", "CnnConfig", "TinyCnn", "forward", "backward",
    "CLASS_NAMES", "N_CLASSES", "CellType", "LabeledPatch", "balance_bootstrap", "balance_downsample",
    "class_counts", "class_weights", "ensemble_predict", "ensemble_predict_batch", "ClassReport",
    "classification_report", "confusion_from_rates", "confusion_matrix", "f_measure", "TrainConfig",
    "TrainingDiverged", "train", "train_ensemble", "member_seeds", "MEMBER_WIDTHS",
]
