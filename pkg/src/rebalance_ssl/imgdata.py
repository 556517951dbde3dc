"""Folder-per-class dataset ingestion, splits, and artificial long-tail imbalance.

Images are plain ``uint8`` arrays of shape ``(H, W, 3)``.  All split
operations are pure functions of their inputs and a seed, so equal seeds
produce byte-identical splits.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import ConfigError

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".tif")

MANIFEST_ROLES = ("labeled", "unlabeled", "test")

# std is floored so normalization never divides by ~0 on constant channels
STD_FLOOR = 1e-6


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check the (H, W, 3) uint8 contract and return the array unchanged."""
    if not isinstance(img, np.ndarray):
        raise TypeError(f"image must be an ndarray, got {type(img).__name__}")
    if img.dtype != np.uint8:
        raise ValueError(f"image dtype must be uint8, got {img.dtype}")
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must have shape (H, W, 3), got {img.shape}")
    return img


def round_half_up(x: float) -> int:
    """Round with ties away from zero toward +inf (0.5 -> 1, 1.5 -> 2)."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class Provenance:
    """Where a labeled example came from: the original split or a promotion."""

    kind: str  # "original" | "pseudo"
    generation: int = 0
    confidence: float = 1.0

    def __post_init__(self):
        if self.kind not in ("original", "pseudo"):
            raise ValueError(f"unknown provenance kind {self.kind!r}")
        if self.kind == "pseudo":
            if self.generation < 1:
                raise ValueError("pseudo provenance requires generation >= 1")
            if not 0.0 <= self.confidence <= 1.0:
                raise ValueError("confidence must lie in [0, 1]")

    @classmethod
    def original(cls) -> "Provenance":
        return cls("original")

    @classmethod
    def pseudo(cls, generation: int, confidence: float) -> "Provenance":
        return cls("pseudo", generation, confidence)


@dataclass(frozen=True)
class LabeledExample:
    path: str
    image: np.ndarray
    class_id: int
    provenance: Provenance = field(default_factory=Provenance.original)


@dataclass(frozen=True)
class UnlabeledExample:
    uid: str  # relative path, unique across the unlabeled pool
    image: np.ndarray


@dataclass(frozen=True)
class SourceExample:
    """One decoded file before any role assignment."""

    path: str
    class_id: int
    image: np.ndarray


@dataclass
class FolderDataset:
    """A decoded folder dataset: every example still carries its folder label."""

    examples: list[SourceExample]
    class_names: list[str]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> list[int]:
        counts = [0] * self.num_classes
        for ex in self.examples:
            counts[ex.class_id] += 1
        return counts


@dataclass(frozen=True)
class ImbalanceSpec:
    """Artificial long-tail construction: gamma = min-class / max-class count."""

    gamma: float
    profile: str = "exponential"  # "exponential" | "linear"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.profile not in ("exponential", "linear"):
            raise ValueError(f"unknown imbalance profile {self.profile!r}")


@dataclass
class DatasetSplit:
    """Final labeled / unlabeled / test partition handed to the pipeline.

    Ground truth of unlabeled examples is kept in a private side table so
    training code, which only ever sees ``unlabeled`` (uid, image) pairs,
    cannot read it.  Use :meth:`true_class_of` for evaluation only.
    """

    labeled: list[LabeledExample]
    unlabeled: list[UnlabeledExample]
    test: list[LabeledExample]
    class_names: list[str]
    _unlabeled_truth: dict[str, int] = field(default_factory=dict, repr=False)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def labeled_counts(self) -> list[int]:
        counts = [0] * self.num_classes
        for ex in self.labeled:
            counts[ex.class_id] += 1
        return counts

    def true_class_of(self, uid: str) -> int:
        """Hidden ground truth of an unlabeled example. Evaluation use only."""
        return self._unlabeled_truth[uid]


def load_dataset(root) -> FolderDataset:
    """Decode a ``<root>/<class_name>/<image>`` folder dataset.

    Class ids follow lexicographic folder order so runs are stable across
    filesystems.  Undecodable files are skipped with a warning; a class
    that ends up empty is an error.
    """
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"dataset root {root} is not a readable directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if len(class_dirs) < 2:
        raise ConfigError(
            f"dataset root {root} must contain at least 2 class folders, "
            f"found {len(class_dirs)}"
        )
    class_names = [p.name for p in class_dirs]
    examples: list[SourceExample] = []
    for class_id, class_dir in enumerate(class_dirs):
        files = sorted(
            p for p in class_dir.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
        )
        n_before = len(examples)
        for f in files:
            try:
                with PILImage.open(f) as im:
                    arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
            except Exception as exc:  # undecodable file: skip, warn
                log.warning("skipping undecodable image %s (%s)", f, exc)
                continue
            examples.append(
                SourceExample(str(f.relative_to(root)), class_id, arr)
            )
        if len(examples) == n_before:
            raise ConfigError(
                f"class folder {class_dir} contains no decodable images"
            )
    sizes = {ex.image.shape for ex in examples}
    if len(sizes) > 1:
        raise ConfigError(
            f"dataset images must share one size, found {sorted(sizes)}"
        )
    return FolderDataset(examples, class_names)


def _per_class_indices(examples: list[SourceExample], num_classes: int) -> list[list[int]]:
    by_class: list[list[int]] = [[] for _ in range(num_classes)]
    for i, ex in enumerate(examples):
        by_class[ex.class_id].append(i)
    return by_class


def split_test(data: FolderDataset, test_fraction: float, seed: int) -> tuple[FolderDataset, FolderDataset]:
    """Stratified train/test split: round(count * fraction) per class, >= 1."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng((seed, 0x7E57))
    by_class = _per_class_indices(data.examples, data.num_classes)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for class_id, idx in enumerate(by_class):
        if len(idx) < 2:
            raise ValueError(
                f"class {data.class_names[class_id]!r} has {len(idx)} example(s); "
                "need at least 2 to stratify a test split"
            )
        n_test = max(1, round_half_up(len(idx) * test_fraction))
        if n_test >= len(idx):
            n_test = len(idx) - 1
        chosen = rng.permutation(len(idx))[:n_test]
        chosen_set = {idx[j] for j in chosen}
        test_idx.extend(sorted(chosen_set))
        train_idx.extend(i for i in idx if i not in chosen_set)
    train = FolderDataset([data.examples[i] for i in sorted(train_idx)], data.class_names)
    test = FolderDataset([data.examples[i] for i in sorted(test_idx)], data.class_names)
    return train, test


def imbalance_targets(n_max: int, num_classes: int, spec: ImbalanceSpec) -> list[int]:
    """Per-position keep targets for positions 1..L of the long-tail profile."""
    targets = []
    for l in range(1, num_classes + 1):
        t = (l - 1) / (num_classes - 1)
        if spec.profile == "exponential":
            raw = n_max * spec.gamma ** t
        else:
            raw = n_max * (1.0 - (1.0 - spec.gamma) * t)
        targets.append(max(1, round_half_up(raw)))
    return targets


def make_imbalanced(train: FolderDataset, spec: ImbalanceSpec) -> FolderDataset:
    """Construct an artificial long tail by dropping examples per class.

    Which classes become minority is a seeded random permutation, so repeated
    experiments average over class identity.  Targets are capped by the
    examples a class actually has; counts never increase.
    """
    rng = np.random.default_rng((spec.seed, 0x1B417))
    counts = train.class_counts()
    n_max = max(counts)
    targets = imbalance_targets(n_max, train.num_classes, spec)
    position_of = rng.permutation(train.num_classes)  # class_id -> tail position (0-based)
    keep_per_class = [
        min(counts[c], targets[position_of[c]]) for c in range(train.num_classes)
    ]
    by_class = _per_class_indices(train.examples, train.num_classes)
    kept: list[int] = []
    for class_id, idx in enumerate(by_class):
        perm = rng.permutation(len(idx))
        kept.extend(idx[j] for j in perm[: keep_per_class[class_id]])
    return FolderDataset([train.examples[i] for i in sorted(kept)], train.class_names)


def split_labeled_unlabeled(
    train: FolderDataset, labeled_fraction: float, seed: int
) -> tuple[list[LabeledExample], list[UnlabeledExample], dict[str, int]]:
    """Stratified labeled/unlabeled split; unlabeled ground truth goes to a side table."""
    if not 0.0 < labeled_fraction < 1.0:
        raise ValueError(f"labeled_fraction must lie in (0, 1), got {labeled_fraction}")
    rng = np.random.default_rng((seed, 0x1AB))
    by_class = _per_class_indices(train.examples, train.num_classes)
    labeled: list[LabeledExample] = []
    unlabeled: list[UnlabeledExample] = []
    truth: dict[str, int] = {}
    for class_id, idx in enumerate(by_class):
        n_lab = round_half_up(len(idx) * labeled_fraction)
        if n_lab == 0:
            raise ValueError(
                f"labeled_fraction {labeled_fraction} leaves class "
                f"{train.class_names[class_id]!r} with no labeled examples"
            )
        n_lab = min(n_lab, len(idx))
        perm = rng.permutation(len(idx))
        chosen = {idx[j] for j in perm[:n_lab]}
        for i in idx:
            ex = train.examples[i]
            if i in chosen:
                labeled.append(LabeledExample(ex.path, ex.image, ex.class_id))
            else:
                unlabeled.append(UnlabeledExample(ex.path, ex.image))
                truth[ex.path] = ex.class_id
    return labeled, unlabeled, truth


def build_split(
    source: FolderDataset,
    test_fraction: float,
    labeled_fraction: float,
    imbalance: ImbalanceSpec | None,
    seed: int,
) -> DatasetSplit:
    """Full pipeline: test carve-out first (keeps test balanced), then
    imbalance construction, then the labeled/unlabeled split."""
    train, test = split_test(source, test_fraction, seed)
    if imbalance is not None:
        train = make_imbalanced(train, replace(imbalance, seed=seed))
    labeled, unlabeled, truth = split_labeled_unlabeled(train, labeled_fraction, seed)
    test_examples = [LabeledExample(ex.path, ex.image, ex.class_id) for ex in test.examples]
    return DatasetSplit(labeled, unlabeled, test_examples, list(source.class_names), truth)


def channel_stats(images: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std over all pixels, on [0, 1]-scaled intensities.

    Uses the population std with a 1e-6 floor.
    """
    if not images:
        raise ValueError("channel_stats needs at least one image")
    n_pixels = sum(img.shape[0] * img.shape[1] for img in images)
    sums = np.zeros(3, dtype=np.float64)
    sq_sums = np.zeros(3, dtype=np.float64)
    for img in images:
        x = img.reshape(-1, 3).astype(np.float64) / 255.0
        sums += x.sum(axis=0)
        sq_sums += (x * x).sum(axis=0)
    mean = sums / n_pixels
    var = sq_sums / n_pixels - mean**2
    std = np.sqrt(np.maximum(var, 0.0))
    return mean, np.maximum(std, STD_FLOOR)


def write_manifest(split: DatasetSplit, path) -> None:
    """Plain-text split manifest: ``relative_path<TAB>role<TAB>class_id``.

    Unlabeled rows carry class_id -1; their ground truth stays hidden.
    """
    lines = []
    for ex in split.labeled:
        lines.append(f"{ex.path}\tlabeled\t{ex.class_id}")
    for ex in split.unlabeled:
        lines.append(f"{ex.uid}\tunlabeled\t-1")
    for ex in split.test:
        lines.append(f"{ex.path}\ttest\t{ex.class_id}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[tuple[str, str, int]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line:
            continue
        rel, role, class_id = line.split("\t")
        if role not in MANIFEST_ROLES:
            raise ValueError(f"unknown manifest role {role!r}")
        rows.append((rel, role, int(class_id)))
    return rows
