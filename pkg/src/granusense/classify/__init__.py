from .dataset import DatasetConfig, DatasetManifest, ManifestEntry, augment, generate_dataset
from .labels import CLASS_NAMES, ClassLabel
from .model import ModelConfigError, ModelFormatError, ModelParams
from .train import (ConfusionMatrix, TrainConfig, TrainingDiverged, TrainResult, evaluate, fit,
                    gradient_check, predict, train)

__all__ = [
    "CLASS_NAMES", "ClassLabel", "ConfusionMatrix", "DatasetConfig", "DatasetManifest",
    "ManifestEntry", "ModelConfigError", "ModelFormatError", "ModelParams", "TrainConfig",
    "TrainResult", "TrainingDiverged", "augment", "evaluate", "fit", "generate_dataset",
    "gradient_check", "predict", "train",
]
