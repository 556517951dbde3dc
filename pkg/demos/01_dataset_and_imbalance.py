"""Build a synthetic folder dataset, carve splits, and construct a long tail.

Run:  python3 demos/01_dataset_and_imbalance.py
"""

import numpy as np

from rebalance_ssl import (
    ImbalanceSpec,
    build_split,
    channel_stats,
    generate_synthetic,
    make_imbalanced,
    split_test,
)

# a small 3-class dataset of striped textures at octave-spaced scales
source = generate_synthetic(num_classes=3, per_class=60, image_size=32, noise_sigma=24.0, seed=7)
print("classes:", source.class_names)
print("per-class counts:", source.class_counts())

# test split first (keeps the test set balanced), then the artificial long tail
train, test = split_test(source, test_fraction=0.10, seed=7)
print("train counts after 10% test carve-out:", train.class_counts())

imbalanced = make_imbalanced(train, ImbalanceSpec(gamma=0.1, profile="exponential", seed=7))
counts = imbalanced.class_counts()
print("long-tail counts (gamma=0.1):", counts, "-> min/max ratio", min(counts) / max(counts))

# the full pipeline in one call: test carve-out, imbalance, labeled/unlabeled split
split = build_split(source, 0.10, 0.25, ImbalanceSpec(gamma=0.1, seed=7), seed=7)
print("labeled counts:", split.labeled_counts())
print("unlabeled pool:", len(split.unlabeled), "| test:", len(split.test))

# per-channel normalization statistics over the training pool
mean, std = channel_stats([ex.image for ex in split.labeled] + [ex.image for ex in split.unlabeled])
print("channel mean:", np.round(mean, 4))
print("channel std: ", np.round(std, 4))
