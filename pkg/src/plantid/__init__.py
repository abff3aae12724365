"""plantid: corpus curation, balanced augmentation, CNN training, and
evaluation for class-per-directory image datasets."""

__version__ = "0.1.0"

from .augment import AugmentationOp, BalancePlan, apply_op, materialize, plan_balance
from .dataset import (
    DatasetIndex,
    ImageSample,
    PreprocessConfig,
    SplitAssignment,
    load_index,
    preprocess,
    stratified_split,
)
from .dedup import DuplicateReport, find_near_duplicates
from .errors import DataError, NumericError, PlantidError, UsageError, WeightsUnavailableError
from .evaluation import (
    ConfusionMatrix,
    EvaluationReport,
    confusion,
    emit_artifacts,
    evaluate_model,
    metrics_from_confusion,
)
from .models import ImageClassifier, ModelSpec, ScratchCNN, build_model, parameter_count
from .training import EpochMetrics, TrainConfig, batch_accuracy, cross_entropy, lr_at, train

__all__ = [
    "AugmentationOp",
    "BalancePlan",
    "ConfusionMatrix",
    "DataError",
    "DatasetIndex",
    "DuplicateReport",
    "EpochMetrics",
    "EvaluationReport",
    "ImageClassifier",
    "ImageSample",
    "ModelSpec",
    "NumericError",
    "PlantidError",
    "PreprocessConfig",
    "ScratchCNN",
    "SplitAssignment",
    "TrainConfig",
    "UsageError",
    "WeightsUnavailableError",
    "apply_op",
    "batch_accuracy",
    "build_model",
    "confusion",
    "cross_entropy",
    "emit_artifacts",
    "evaluate_model",
    "find_near_duplicates",
    "load_index",
    "lr_at",
    "materialize",
    "metrics_from_confusion",
    "parameter_count",
    "plan_balance",
    "preprocess",
    "stratified_split",
    "train",
]
