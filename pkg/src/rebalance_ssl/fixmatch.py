"""Semi-supervised training: supervised cross-entropy on weakly augmented
labeled images plus a confidence-thresholded consistency loss that pushes
the strongly augmented view of an unlabeled image toward the hard
pseudo-label its weak view produced.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import augment
from .errors import TrainingDiverged
from .imgdata import LabeledExample, UnlabeledExample, channel_stats
from .model import (
    Classifier,
    OptimizerConfig,
    TrainingOptimizer,
    build_classifier,
    normalize_batch,
    save_checkpoint,
)

# stream tags for per-image augmentation rng derivation
_LABELED_WEAK = 1
_UNLABELED_WEAK = 2
_UNLABELED_STRONG = 3
_LABELED_ORDER = 4
_UNLABELED_ORDER = 5
_MODEL_INIT = 6


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.95  # confidence threshold for pseudo-labels
    batch_size_labeled: int = 16
    unlabeled_ratio: int = 7  # unlabeled batch = ratio * labeled batch
    lambda_u: float = 1.0
    epochs: int = 512
    iterations_per_epoch: int = 1024
    seed: int = 0
    checkpoint_interval: int | None = None

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        for name in ("batch_size_labeled", "unlabeled_ratio", "epochs", "iterations_per_epoch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.iterations_per_epoch


@dataclass(frozen=True)
class PseudoLabel:
    unlabeled_id: str
    class_id: int
    confidence: float


def pseudo_label(probs: np.ndarray, tau: float) -> tuple[int, float] | None:
    """Hard label (argmax class, its probability) iff max prob >= tau.

    Ties break toward the lowest class index.
    """
    probs = np.asarray(probs, dtype=np.float64)
    class_id = int(np.argmax(probs))
    confidence = float(probs[class_id])
    if confidence >= tau:
        return class_id, confidence
    return None


def supervised_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over the labeled batch."""
    return F.cross_entropy(logits, labels, reduction="mean")


def unsupervised_loss(
    weak_probs: torch.Tensor, strong_logits: torch.Tensor, tau: float
) -> tuple[torch.Tensor, float]:
    """Masked pseudo-label consistency loss and the fraction that passed tau.

    The loss averages over the *full* batch, so low-confidence examples
    shrink it rather than being dropped from the denominator.  Gradients
    flow only through the strong-view logits: the weak-view probabilities
    are detached and act as constants.
    """
    if weak_probs.shape[0] == 0:
        return strong_logits.sum() * 0.0, 0.0
    weak_probs = weak_probs.detach()
    confidence, targets = weak_probs.max(dim=1)
    mask = (confidence >= tau).to(strong_logits.dtype)
    per_example = F.cross_entropy(strong_logits, targets, reduction="none")
    loss = (per_example * mask).mean()
    return loss, float(mask.mean().item())


@dataclass(frozen=True)
class TraceRow:
    step: int
    sup_loss: float
    unsup_loss: float
    mask_fraction: float
    lr: float


def write_trace_csv(trace: list[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "sup_loss", "unsup_loss", "mask_fraction", "lr"])
        for row in trace:
            writer.writerow(
                [
                    row.step,
                    f"{row.sup_loss:.6f}",
                    f"{row.unsup_loss:.6f}",
                    f"{row.mask_fraction:.6f}",
                    f"{row.lr:.8f}",
                ]
            )


class _EpochSampler:
    """Infinite index stream: reshuffled full passes, cycling when the set
    is smaller than a batch."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self._queue: list[int] = []

    def take(self, k: int) -> list[int]:
        out: list[int] = []
        while len(out) < k:
            if not self._queue:
                self._queue = list(self.rng.permutation(self.n))
            out.append(self._queue.pop())
        return out


@dataclass
class TrainResult:
    classifier: Classifier
    trace: list[TraceRow]
    mean: np.ndarray
    std: np.ndarray


def train_generation(
    labeled: list[LabeledExample],
    unlabeled: list[UnlabeledExample],
    num_classes: int,
    train_config: TrainConfig,
    optimizer_config: OptimizerConfig,
    weak_policy: augment.WeakPolicy,
    strong_policy: augment.StrongPolicy,
    arch: str = "small",
    checkpoint_dir=None,
) -> TrainResult:
    """Train one model from a fresh initialization over the current sets.

    Normalization statistics come from the training pool the model actually
    consumes (labeled plus unlabeled when the unsupervised term is active),
    which is invariant across generations because promotion only moves
    images between the two sets.
    """
    if not labeled:
        raise ValueError("labeled set must be nonempty")
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    seed = train_config.seed
    input_size = labeled[0].image.shape[0]
    use_unlabeled = train_config.lambda_u > 0 and len(unlabeled) > 0
    pool = [ex.image for ex in labeled]
    if use_unlabeled:
        pool += [ex.image for ex in unlabeled]
    mean, std = channel_stats(pool)

    init_seed = int(np.random.default_rng((seed, _MODEL_INIT)).integers(0, 2**63))
    classifier = build_classifier(arch, num_classes, input_size, seed=init_seed)
    classifier.train_mode()

    total_steps = train_config.total_steps
    optimizer = TrainingOptimizer(classifier, optimizer_config, total_steps)
    labeled_sampler = _EpochSampler(
        len(labeled), np.random.default_rng((seed, _LABELED_ORDER))
    )
    if use_unlabeled:
        unlabeled_sampler = _EpochSampler(
            len(unlabeled), np.random.default_rng((seed, _UNLABELED_ORDER))
        )
    labels_all = torch.tensor([ex.class_id for ex in labeled], dtype=torch.long)

    trace: list[TraceRow] = []
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    for step in range(total_steps):
        lab_idx = labeled_sampler.take(train_config.batch_size_labeled)
        lab_images = [
            augment.weak_augment(
                labeled[i].image, weak_policy, augment.stream_for(seed, _LABELED_WEAK, step, i)
            )
            for i in lab_idx
        ]
        lab_batch = normalize_batch(lab_images, mean, std)
        lab_targets = labels_all[lab_idx]

        optimizer.zero_grad()
        if use_unlabeled:
            unl_idx = unlabeled_sampler.take(
                train_config.unlabeled_ratio * train_config.batch_size_labeled
            )
            weak_images = [
                augment.weak_augment(
                    unlabeled[i].image, weak_policy, augment.stream_for(seed, _UNLABELED_WEAK, step, i)
                )
                for i in unl_idx
            ]
            strong_images = [
                augment.strong_augment(
                    unlabeled[i].image, strong_policy, augment.stream_for(seed, _UNLABELED_STRONG, step, i)
                )
                for i in unl_idx
            ]
            n_lab = len(lab_images)
            n_unl = len(weak_images)
            batch = torch.cat(
                [lab_batch, normalize_batch(weak_images, mean, std), normalize_batch(strong_images, mean, std)]
            )
            logits = classifier.forward(batch)
            logits_lab = logits[:n_lab]
            logits_weak = logits[n_lab : n_lab + n_unl]
            logits_strong = logits[n_lab + n_unl :]
            sup = supervised_loss(logits_lab, lab_targets)
            weak_probs = torch.softmax(logits_weak.detach(), dim=1)
            unsup, mask_fraction = unsupervised_loss(weak_probs, logits_strong, train_config.tau)
            loss = sup + train_config.lambda_u * unsup
        else:
            logits_lab = classifier.forward(lab_batch)
            sup = supervised_loss(logits_lab, lab_targets)
            unsup = torch.zeros(())
            mask_fraction = 0.0
            loss = sup

        if not math.isfinite(float(loss.item())):
            raise TrainingDiverged(
                f"non-finite loss at step {step}: sup={float(sup.item())!r} "
                f"unsup={float(unsup.item())!r}"
            )
        loss.backward()
        lr = optimizer.step(step)
        trace.append(
            TraceRow(step, float(sup.item()), float(unsup.item()), mask_fraction, lr)
        )
        if (
            checkpoint_dir is not None
            and train_config.checkpoint_interval
            and (step + 1) % train_config.checkpoint_interval == 0
        ):
            save_checkpoint(classifier, checkpoint_dir / "checkpoint.pt", optimizer)

    classifier.eval_mode()
    if checkpoint_dir is not None:
        save_checkpoint(classifier, checkpoint_dir / "checkpoint.pt", optimizer)
    return TrainResult(classifier, trace, mean, std)
