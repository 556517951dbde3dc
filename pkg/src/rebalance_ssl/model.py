"""Trainable classifiers, the SGD contract, and checkpoint I/O.

Two architectures are exposed behind one interface: the standard
Wide-ResNet 28-2 backbone for full-scale runs, and a small convolutional
net that trains on a CPU in minutes for tests and demos.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import TrainingDiverged

CHECKPOINT_VERSION = 1

ARCHITECTURES = ("small", "wrn28-2")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.03
    momentum: float = 0.9  # Nesterov
    weight_decay: float = 5e-4
    lr_schedule: str = "cosine"  # "cosine" | "constant"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")


def schedule_lr(config: OptimizerConfig, step_index: int, total_steps: int) -> float:
    """Learning rate at a step: half-cosine decay to 0, or constant."""
    if config.lr_schedule == "constant" or total_steps <= 0:
        return config.learning_rate
    t = min(max(step_index, 0), total_steps) / total_steps
    return config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * t))


class SmallCNN(nn.Module):
    """Four trainable layers (3 conv + linear head) with group norm and GAP.

    Activations and pooling are smooth (SiLU, average pooling) so finite
    differences agree with autograd everywhere.
    """

    def __init__(self, num_classes: int, input_size: int):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 16, 3, padding=1)
        self.gn1 = nn.GroupNorm(4, 16)
        self.conv2 = nn.Conv2d(16, 32, 3, padding=1)
        self.gn2 = nn.GroupNorm(4, 32)
        self.conv3 = nn.Conv2d(32, 64, 3, padding=1)
        self.gn3 = nn.GroupNorm(4, 64)
        self.fc = nn.Linear(64, num_classes)

    def forward(self, x):
        x = F.silu(self.gn1(self.conv1(x)))
        x = F.avg_pool2d(x, 2)
        x = F.silu(self.gn2(self.conv2(x)))
        x = F.avg_pool2d(x, 2)
        x = F.silu(self.gn3(self.conv3(x)))
        x = F.adaptive_avg_pool2d(x, 1).flatten(1)
        return self.fc(x)


class _WideBasic(nn.Module):
    """Pre-activation residual block of the wide residual network."""

    def __init__(self, in_planes: int, out_planes: int, stride: int):
        super().__init__()
        self.bn1 = nn.BatchNorm2d(in_planes)
        self.conv1 = nn.Conv2d(in_planes, out_planes, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_planes)
        self.conv2 = nn.Conv2d(out_planes, out_planes, 3, stride=1, padding=1, bias=False)
        self.equal_io = in_planes == out_planes and stride == 1
        self.shortcut = (
            None
            if self.equal_io
            else nn.Conv2d(in_planes, out_planes, 1, stride=stride, bias=False)
        )

    def forward(self, x):
        out = F.relu(self.bn1(x))
        shortcut = x if self.equal_io else self.shortcut(out)
        out = self.conv2(F.relu(self.bn2(self.conv1(out))))
        return out + shortcut


class WideResNet(nn.Module):
    """Wide residual network, depth 28, widen factor 2."""

    def __init__(self, num_classes: int, depth: int = 28, widen: int = 2):
        super().__init__()
        if (depth - 4) % 6 != 0:
            raise ValueError("depth must be 6n + 4")
        n = (depth - 4) // 6
        widths = [16, 16 * widen, 32 * widen, 64 * widen]
        self.conv1 = nn.Conv2d(3, widths[0], 3, padding=1, bias=False)
        self.block1 = self._group(widths[0], widths[1], n, stride=1)
        self.block2 = self._group(widths[1], widths[2], n, stride=2)
        self.block3 = self._group(widths[2], widths[3], n, stride=2)
        self.bn = nn.BatchNorm2d(widths[3])
        self.fc = nn.Linear(widths[3], num_classes)

    @staticmethod
    def _group(in_planes, out_planes, n, stride):
        layers = [_WideBasic(in_planes, out_planes, stride)]
        layers += [_WideBasic(out_planes, out_planes, 1) for _ in range(n - 1)]
        return nn.Sequential(*layers)

    def forward(self, x):
        x = self.conv1(x)
        x = self.block3(self.block2(self.block1(x)))
        x = F.relu(self.bn(x))
        x = F.adaptive_avg_pool2d(x, 1).flatten(1)
        return self.fc(x)


class Classifier:
    """A network plus the metadata needed to feed and persist it."""

    def __init__(self, net: nn.Module, arch: str, num_classes: int, input_size: int):
        self.net = net
        self.arch = arch
        self.num_classes = num_classes
        self.input_size = input_size

    def parameters(self):
        return self.net.parameters()

    def train_mode(self):
        self.net.train()
        return self

    def eval_mode(self):
        self.net.eval()
        return self

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        return self.net(batch)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())


def build_classifier(arch: str, num_classes: int, input_size: int, seed: int = 0) -> Classifier:
    """Construct a freshly initialized classifier with seeded weights."""
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
    if input_size < 8 or input_size % 4 != 0:
        raise ValueError(
            f"input size {input_size} unsupported: must be a multiple of 4 and >= 8"
        )
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        if arch == "small":
            net = SmallCNN(num_classes, input_size)
        else:
            net = WideResNet(num_classes)
    return Classifier(net, arch, num_classes, input_size)


def normalize_batch(
    images: list[np.ndarray] | np.ndarray,
    mean: np.ndarray,
    std: np.ndarray,
    dtype=torch.float32,
) -> torch.Tensor:
    """Stack uint8 images into a normalized NCHW tensor: ((v/255) - mean) / std."""
    arr = np.stack(images).astype(np.float64) / 255.0
    arr = (arr - mean) / std
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def predict_probs(
    classifier: Classifier,
    images: list[np.ndarray],
    mean: np.ndarray,
    std: np.ndarray,
    batch_size: int = 256,
) -> np.ndarray:
    """Eval-mode softmax probabilities, row-normalized to 1."""
    if len(images) == 0:
        return np.zeros((0, classifier.num_classes))
    for img in images:
        if img.shape[0] != classifier.input_size or img.shape[1] != classifier.input_size:
            raise ValueError(
                f"image size {img.shape[:2]} does not match classifier input "
                f"size {classifier.input_size}"
            )
    classifier.eval_mode()
    chunks = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            batch = normalize_batch(images[start : start + batch_size], mean, std)
            logits = classifier.forward(batch)
            chunks.append(torch.softmax(logits, dim=1).double().numpy())
    return np.concatenate(chunks, axis=0)


class TrainingOptimizer:
    """Nesterov SGD with L2 weight decay folded into the gradient and a
    per-step learning-rate schedule."""

    def __init__(self, classifier: Classifier, config: OptimizerConfig, total_steps: int):
        self.config = config
        self.total_steps = total_steps
        self.opt = torch.optim.SGD(
            classifier.parameters(),
            lr=config.learning_rate,
            momentum=config.momentum,
            weight_decay=config.weight_decay,
            nesterov=config.momentum > 0,
        )

    def step(self, step_index: int) -> float:
        """Check gradients, apply the scheduled update, return the lr used."""
        for group in self.opt.param_groups:
            for p in group["params"]:
                if p.grad is not None and not torch.isfinite(p.grad).all():
                    raise TrainingDiverged(
                        f"non-finite gradient at step {step_index} "
                        f"(parameter shape {tuple(p.shape)})"
                    )
        lr = schedule_lr(self.config, step_index, self.total_steps)
        for group in self.opt.param_groups:
            group["lr"] = lr
        self.opt.step()
        return lr

    def zero_grad(self):
        self.opt.zero_grad(set_to_none=True)

    def state_dict(self):
        return self.opt.state_dict()


def sgd_step(
    classifier: Classifier,
    config: OptimizerConfig,
    step_index: int,
    total_steps: int,
    optimizer: TrainingOptimizer | None = None,
) -> tuple[TrainingOptimizer, float]:
    """One scheduled Nesterov update using the gradients currently stored
    on the classifier's parameters.  Returns the (possibly new) optimizer
    and the learning rate applied."""
    if optimizer is None:
        optimizer = TrainingOptimizer(classifier, config, total_steps)
    lr = optimizer.step(step_index)
    return optimizer, lr


def save_checkpoint(
    classifier: Classifier,
    path,
    optimizer: TrainingOptimizer | None = None,
    extra: dict | None = None,
) -> None:
    """Versioned binary checkpoint with architecture tag and rng state."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "arch": classifier.arch,
        "num_classes": classifier.num_classes,
        "input_size": classifier.input_size,
        "model_state": classifier.net.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "torch_rng_state": torch.get_rng_state(),
        "extra": extra or {},
    }
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    with open(path, "wb") as fh:
        fh.write(buffer.getvalue())


def load_checkpoint(path, expected_arch: str | None = None) -> tuple[Classifier, dict]:
    """Rebuild a classifier from a checkpoint; refuse version/arch mismatches."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint version {payload.get('version')} not supported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    arch = payload["arch"]
    if expected_arch is not None and arch != expected_arch:
        raise ValueError(f"checkpoint architecture {arch!r} != expected {expected_arch!r}")
    classifier = build_classifier(arch, payload["num_classes"], payload["input_size"])
    classifier.net.load_state_dict(payload["model_state"])
    classifier.eval_mode()
    return classifier, payload
