"""Seeded synthetic folder-dataset generator.

Classes are texture scales: each class owns a stripe-frequency octave, and
every image draws its own orientation, phase, color tint, illumination
ramp, and pixel noise.  Color carries no class signal, so the heavy
augmentation pool (hue/color/brightness jitter, geometric warps) perturbs
images without erasing class identity.  ``freq_jitter`` is the
separability knob: it widens each class's frequency band (in octaves)
until neighboring bands overlap, so a classifier trained on a handful of
labeled examples places the band boundaries imperfectly.
"""

from __future__ import annotations

import numpy as np

from .augment import hsv_to_rgb
from .imgdata import FolderDataset, SourceExample


def generate_synthetic(
    num_classes: int = 3,
    per_class: int | list[int] = 167,
    image_size: int = 32,
    noise_sigma: float = 24.0,
    freq_jitter: float = 0.35,
    seed: int = 0,
) -> FolderDataset:
    """Build an in-memory folder dataset of striped-texture classes.

    Class c draws stripe frequencies around ``2^(c+1)`` cycles per image
    with log-normal jitter of ``freq_jitter`` octaves.  ``per_class`` may
    be a single count or one count per class.  Paths follow the
    ``class_<c>/img_<i>.png`` convention so manifests look like a real
    folder dataset.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if isinstance(per_class, int):
        per_class = [per_class] * num_classes
    if len(per_class) != num_classes or any(n < 1 for n in per_class):
        raise ValueError("per_class must be a positive count (or one per class)")
    rng = np.random.default_rng((seed, 0x5D17))
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64)
    examples = []
    class_names = [f"class_{c}" for c in range(num_classes)]
    for c in range(num_classes):
        base_cycles = 2.0 ** (c + 1)
        for i in range(per_class[c]):
            cycles = base_cycles * 2.0 ** rng.normal(0.0, freq_jitter)
            theta = rng.uniform(0.0, np.pi)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            wave = np.sin(
                2.0 * np.pi * cycles / image_size * (np.cos(theta) * xx + np.sin(theta) * yy)
                + phase
            )
            stripes = 0.55 + 0.45 * wave

            # color tint is class-independent: hue uniform, moderate saturation
            tint = hsv_to_rgb(
                np.array([rng.uniform(0.0, 1.0), rng.uniform(0.2, 0.7), rng.uniform(0.55, 0.95)])
            )
            direction = rng.uniform(0.0, 2.0 * np.pi)
            ramp = (np.cos(direction) * xx + np.sin(direction) * yy) / image_size
            illum = 1.0 + 0.25 * (ramp - ramp.mean())
            base = tint[None, None, :] * 255.0 * (stripes * illum)[..., None]
            noisy = base + rng.normal(0.0, noise_sigma, size=base.shape)
            img = np.clip(noisy, 0.0, 255.0).astype(np.uint8)
            examples.append(SourceExample(f"class_{c}/img_{i:05d}.png", c, img))
    return FolderDataset(examples, class_names)
