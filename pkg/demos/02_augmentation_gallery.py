"""Render every strong-pool transform plus the weak policy on one image.

Writes demos/output/augmentation_gallery.png with one panel per transform.

Run:  python3 demos/02_augmentation_gallery.py
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from rebalance_ssl import StrongPolicy, WeakPolicy, strong_augment, weak_augment
from rebalance_ssl.augment import TRANSFORM_RANGES, apply_transform
from rebalance_ssl.synthetic import generate_synthetic

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

source = generate_synthetic(num_classes=3, per_class=2, image_size=64, noise_sigma=12.0, seed=3)
img = source.examples[0].image

panels = [("original", img)]
for name in sorted(TRANSFORM_RANGES):
    rng = np.random.default_rng((5, hash(name) % 2**32))
    span = TRANSFORM_RANGES[name]
    magnitude = None if span is None else 0.5 * (span[0] + span[1])
    panels.append((name, apply_transform(name, magnitude, img, rng)))
panels.append(("weak policy", weak_augment(img, WeakPolicy(), np.random.default_rng(1))))
panels.append(("strong policy", strong_augment(img, StrongPolicy(), np.random.default_rng(2))))

cols = 6
rows = (len(panels) + cols - 1) // cols
fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.4 * rows))
for ax in axes.ravel():
    ax.axis("off")
for ax, (title, panel) in zip(axes.ravel(), panels):
    ax.imshow(panel)
    ax.set_title(title, fontsize=8)
fig.tight_layout()
target = out_dir / "augmentation_gallery.png"
fig.savefig(target, dpi=110)
print("wrote", target)
print("strong pool:", ", ".join(StrongPolicy().pool))
