"""Semi-supervised image classification with iterative class rebalancing.

Train a classifier from a small labeled set plus a large unlabeled pool
using confidence-thresholded pseudo-labeling over weak/strong augmented
views, then rebalance imbalanced labeled data across generations by
promoting confident pseudo-labels with adaptive per-class sampling rates.
"""

from .augment import StrongPolicy, WeakPolicy, apply_transform, strong_augment, weak_augment
from .errors import ConfigError, TrainingDiverged
from .fixmatch import (
    PseudoLabel,
    TrainConfig,
    pseudo_label,
    supervised_loss,
    train_generation,
    unsupervised_loss,
)
from .imgdata import (
    DatasetSplit,
    FolderDataset,
    ImbalanceSpec,
    LabeledExample,
    Provenance,
    UnlabeledExample,
    build_split,
    channel_stats,
    load_dataset,
    make_imbalanced,
    split_labeled_unlabeled,
    split_test,
)
from .metrics import EvalReport, evaluate, render_reports, summarize
from .model import Classifier, OptimizerConfig, build_classifier, predict_probs
from .rebalance import (
    GenerationState,
    RebalanceConfig,
    SamplingRates,
    class_ranks,
    expand_labeled_set,
    harvest_pseudo_labels,
    run_generations,
    sampling_rates,
    select_for_promotion,
)
from .synthetic import generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "TrainingDiverged",
    "StrongPolicy",
    "WeakPolicy",
    "apply_transform",
    "strong_augment",
    "weak_augment",
    "PseudoLabel",
    "TrainConfig",
    "pseudo_label",
    "supervised_loss",
    "unsupervised_loss",
    "train_generation",
    "DatasetSplit",
    "FolderDataset",
    "ImbalanceSpec",
    "LabeledExample",
    "Provenance",
    "UnlabeledExample",
    "build_split",
    "channel_stats",
    "load_dataset",
    "make_imbalanced",
    "split_labeled_unlabeled",
    "split_test",
    "EvalReport",
    "evaluate",
    "render_reports",
    "summarize",
    "Classifier",
    "OptimizerConfig",
    "build_classifier",
    "predict_probs",
    "GenerationState",
    "RebalanceConfig",
    "SamplingRates",
    "class_ranks",
    "expand_labeled_set",
    "harvest_pseudo_labels",
    "run_generations",
    "sampling_rates",
    "select_for_promotion",
    "generate_synthetic",
]
