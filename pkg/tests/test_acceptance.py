"""Acceptance suite: every quantitative contract at its stated tolerance.

Each test prints one ``[criterion N] PASS/FAIL`` line (run with ``-s`` to
see them live).  The end-to-end criteria share one seeded desk-scale run
through the CLI, plus a byte-identity rerun from the frozen config.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from mpmath import mp, mpf

from rebalance_ssl import cli
from rebalance_ssl.augment import (
    STRONG_POOL,
    TRANSFORM_RANGES,
    StrongPolicy,
    apply_transform,
)
from rebalance_ssl.fixmatch import PseudoLabel, supervised_loss, unsupervised_loss
from rebalance_ssl.imgdata import FolderDataset, ImbalanceSpec, SourceExample, make_imbalanced
from rebalance_ssl.model import build_classifier
from rebalance_ssl.rebalance import read_promotions, sampling_rates, select_for_promotion

TABLE_NAMES = {
    "AutoContrast", "Brightness", "Color", "Hue", "Equalize", "Identity",
    "Posterize", "Shift", "Rotate", "Sharpness", "ShearX", "ShearY",
    "Solarize", "TranslateX", "TranslateY",
}


def criterion(number, ok, detail):
    print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {number} failed: {detail}"


# ---------------------------------------------------------------------------
# criterion 1: sampling-rate oracle equivalence
# ---------------------------------------------------------------------------

def _oracle_rates(counts, alpha_mp):
    """High-precision independent evaluation of the rank-mirror power rule."""
    mp.dps = 50
    eff = np.maximum(np.asarray(counts), 1)
    order = np.lexsort((np.arange(len(eff)), -eff))  # desc count, ties by class id
    sorted_desc = eff[order]
    n1 = int(sorted_desc[0])
    num = len(eff)
    raw = []
    for l in range(1, num + 1):
        mirror = int(sorted_desc[num - l])
        raw.append(mpf(1) if mirror == n1 else mp.power(mpf(mirror) / n1, alpha_mp))
    # tied counts share the largest rate of their group
    mu_by_rank = list(raw)
    start = 0
    for i in range(1, num + 1):
        if i == num or sorted_desc[i] != sorted_desc[start]:
            for j in range(start, i):
                mu_by_rank[j] = raw[i - 1]
            start = i
    mu = [mpf(0)] * num
    for position, class_id in enumerate(order):
        mu[class_id] = mu_by_rank[position]
    return mu


def test_criterion_1_rate_oracle_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(20240)
    alphas = [(0.0, mpf(0)), (1.0 / 3.0, mpf(1) / 3), (0.5, mpf(1) / 2), (1.0, mpf(1))]
    worst = 0.0
    for trial in range(200):
        num_classes = int(rng.integers(2, 22))
        counts = [int(c) for c in rng.integers(1, 10_001, num_classes)]
        alpha, alpha_mp = alphas[trial % len(alphas)]
        got = sampling_rates(counts, alpha).mu
        want = _oracle_rates(counts, alpha_mp)
        for c in range(num_classes):
            rel = abs(got[c] - float(want[c])) / float(want[c])
            worst = max(worst, rel)
        min_count = min(counts)
        for c in range(num_classes):
            if counts[c] == min_count:
                assert got[c] == 1.0
        by_count = sorted(range(num_classes), key=lambda c: counts[c])
        for a, b in zip(by_count, by_count[1:]):
            assert got[a] >= got[b]  # mu nonincreasing in count
    elapsed = time.time() - t0
    criterion(
        1,
        worst <= 1e-12 and elapsed < 1.0,
        f"200 random count vectors, worst relative error {worst:.2e} (<= 1e-12), "
        f"min-count rate exactly 1, monotone; {elapsed:.2f}s (< 1s)",
    )


# ---------------------------------------------------------------------------
# criterion 2: stochastic selection calibration
# ---------------------------------------------------------------------------

def test_criterion_2_selection_calibration():
    t0 = time.time()
    rates = sampling_rates([100, 50, 10], alpha=1.0 / 3.0)
    expected = [0.4641588833612779, 0.7937005259840998, 1.0]
    np.testing.assert_allclose(rates.mu, expected, rtol=1e-12)
    per_class = 10_000
    candidates = [
        PseudoLabel(f"c{c}/u{i:06d}", c, 0.99)
        for c in range(3)
        for i in range(per_class)
    ]
    selected = select_for_promotion(candidates, rates, np.random.default_rng(777))
    got = [0, 0, 0]
    for cand in selected:
        got[cand.class_id] += 1
    details = []
    ok = True
    for c in range(3):
        frac = got[c] / per_class
        sigma = (expected[c] * (1 - expected[c]) / per_class) ** 0.5
        ok = ok and abs(frac - expected[c]) <= 3 * sigma + 1e-12
        details.append(f"class {c}: {frac:.4f} vs {expected[c]:.4f} (3sigma={3 * sigma:.4f})")
    elapsed = time.time() - t0
    criterion(2, ok and elapsed < 5.0, "; ".join(details) + f"; {elapsed:.2f}s (< 5s)")


# ---------------------------------------------------------------------------
# criterion 3: loss oracles
# ---------------------------------------------------------------------------

def test_criterion_3_loss_oracles():
    t0 = time.time()
    checks = []

    logits = torch.tensor([[0.0, 0.0]], dtype=torch.float64)
    checks.append(abs(supervised_loss(logits, torch.tensor([0])).item() - np.log(2)) <= 1e-6)

    logits = torch.tensor([[50.0, 0.0], [0.0, 0.0]], dtype=torch.float64)
    checks.append(
        abs(supervised_loss(logits, torch.tensor([0, 0])).item() - np.log(2) / 2) <= 1e-6
    )

    weak = torch.tensor([[0.96, 0.04]], dtype=torch.float64)
    strong = torch.log(torch.tensor([[0.7, 0.3]], dtype=torch.float64))
    loss, mask = unsupervised_loss(weak, strong, 0.95)
    checks.append(abs(loss.item() - (-np.log(0.7))) <= 1e-6 and mask == 1.0)

    weak = torch.tensor([[0.96, 0.04], [0.6, 0.4]], dtype=torch.float64)
    strong = torch.log(torch.tensor([[0.7, 0.3], [0.5, 0.5]], dtype=torch.float64))
    loss, mask = unsupervised_loss(weak, strong, 0.95)
    checks.append(abs(loss.item() - (-np.log(0.7) / 2)) <= 1e-6 and mask == 0.5)

    weak = torch.tensor([[0.90, 0.10], [0.6, 0.4]], dtype=torch.float64)
    loss, mask = unsupervised_loss(weak, strong, 0.95)
    checks.append(loss.item() == 0.0 and mask == 0.0)  # exactly 0 below tau

    elapsed = time.time() - t0
    criterion(
        3,
        all(checks) and elapsed < 1.0,
        f"supervised/unsupervised hand oracles within 1e-6, masked loss exactly 0; "
        f"{elapsed:.2f}s (< 1s)",
    )


# ---------------------------------------------------------------------------
# criterion 4: gradient check
# ---------------------------------------------------------------------------

def test_criterion_4_gradient_check():
    t0 = time.time()
    h = 1e-3
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        clf = build_classifier("small", 3, 16, seed=seed)
        net = clf.net.double()
        images = torch.from_numpy(rng.random((4, 3, 16, 16)))  # [0, 1]-scaled inputs
        labels = torch.from_numpy(rng.integers(0, 3, 4))

        def loss_value():
            return F.cross_entropy(net(images), labels)

        net.zero_grad()
        loss_value().backward()
        params = list(net.parameters())
        for _ in range(20):
            p = params[rng.integers(0, len(params))]
            flat = p.detach().reshape(-1)
            j = int(rng.integers(0, flat.numel()))
            analytic = p.grad.reshape(-1)[j].item()
            with torch.no_grad():
                orig = flat[j].item()
                flat[j] = orig + h
                up = loss_value().item()
                flat[j] = orig - h
                down = loss_value().item()
                flat[j] = orig
            numeric = (up - down) / (2 * h)
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, rel)
    elapsed = time.time() - t0
    criterion(
        4,
        worst <= 1e-3 and elapsed < 30.0,
        f"20 parameters x 5 seeds, worst relative error {worst:.2e} (<= 1e-3); "
        f"{elapsed:.1f}s (< 30s)",
    )


# ---------------------------------------------------------------------------
# criterion 5: augmentation invariants
# ---------------------------------------------------------------------------

def test_criterion_5_augmentation_invariants():
    t0 = time.time()
    rng = np.random.default_rng(5150)
    ok = True
    for name in sorted(TRANSFORM_RANGES):
        span = TRANSFORM_RANGES[name]
        for trial in range(50):
            img = rng.integers(0, 256, (24, 24, 3), np.uint8)
            magnitude = None if span is None else float(rng.uniform(*span))
            out = apply_transform(name, magnitude, img, np.random.default_rng(trial))
            ok = ok and out.shape == img.shape and out.dtype == np.uint8
            ok = ok and int(out.min()) >= 0 and int(out.max()) <= 255
            if name == "Identity":
                ok = ok and np.array_equal(out, img)
        if span is not None and name == "Rotate":
            img = rng.integers(0, 256, (24, 24, 3), np.uint8)
            ok = ok and np.array_equal(
                apply_transform("Rotate", 0.0, img, np.random.default_rng(0)), img
            )
    serialized = StrongPolicy().serialize()
    names = {entry["name"] for entry in serialized["pool"]}
    ok = ok and names == TABLE_NAMES and len(serialized["pool"]) == 15
    ok = ok and "Contrast" not in names
    try:
        StrongPolicy(pool=("Contrast",))
        ok = False
    except ValueError:
        pass
    elapsed = time.time() - t0
    criterion(
        5,
        ok and elapsed < 10.0,
        f"15 transforms x 50 images keep dimensions and [0,255]; Identity/Rotate(0) "
        f"pixel-identical; pool serializes to the 15 names with Contrast rejected; "
        f"{elapsed:.1f}s (< 10s)",
    )


# ---------------------------------------------------------------------------
# criteria 6 + 7: desk-scale end-to-end run, conservation, determinism
# ---------------------------------------------------------------------------

ACCEPTANCE_CONFIG = """\
dataset:
  name: synthetic
  test_fraction: 0.10
  labeled_fraction: 0.3
  gamma: 0.1
  profile: exponential
  synthetic:
    num_classes: 3
    per_class: [167, 167, 166]
    image_size: 32
    noise_sigma: 60.0
    hue_jitter: 0.12
train:
  batch_size_labeled: 16
  unlabeled_ratio: 7
  epochs: 1
  iterations_per_epoch: 600
optimizer:
  learning_rate: 0.03
rebalance:
  generations: 3
  alpha: 1.0
  promote_tau: 0.95
arch: small
seed: 42
"""

GEN_TEXT_FILES = ("labeled_manifest.tsv", "promotions.tsv", "metrics.json", "trace.csv")


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """One full seeded run via the CLI plus a rerun from its frozen config."""
    base = tmp_path_factory.mktemp("acceptance")
    config_path = base / "config.yaml"
    config_path.write_text(ACCEPTANCE_CONFIG)
    run_a = base / "run_a"
    t0 = time.time()
    assert cli.main(["run", "--config", str(config_path), "--output", str(run_a)]) == 0
    elapsed_a = time.time() - t0
    # rerun strictly from the frozen copy the first run wrote
    run_b = base / "run_b"
    frozen = run_a / "config.resolved.yaml"
    assert cli.main(["run", "--config", str(frozen), "--output", str(run_b)]) == 0
    return {"a": run_a, "b": run_b, "elapsed_a": elapsed_a}


def _gen_metrics(run_dir):
    reports = []
    for k in range(3):
        reports.append(json.loads((run_dir / f"gen_{k}" / "metrics.json").read_text()))
    return reports


def test_criterion_6_end_to_end_rebalancing(desk_run):
    reports = _gen_metrics(desk_run["a"])
    ratios = [rep["labeled_imbalance_ratio"] for rep in reports]
    counts0 = reports[0]["extras"]["labeled_counts"]
    minority = int(np.argmin(counts0))
    recalls = [rep["per_class_recall"][minority] for rep in reports]
    accs = [rep["overall_accuracy"] for rep in reports]

    ratio_ok = ratios[1] > ratios[0] and ratios[2] > ratios[1]
    recall_ok = recalls[2] >= recalls[0] + 0.05
    acc_ok = accs[2] >= accs[1] - 0.02
    time_ok = desk_run["elapsed_a"] < 15 * 60
    criterion(
        6,
        ratio_ok and recall_ok and acc_ok and time_ok,
        f"(a) labeled ratio strictly increases after each expansion: "
        f"{ratios[0]:.4f} -> {ratios[1]:.4f} -> {ratios[2]:.4f}; "
        f"(b) minority recall gen2 {recalls[2]:.3f} >= gen0 {recalls[0]:.3f} + 0.05; "
        f"(c) accuracy gen2 {accs[2]:.3f} >= gen1 {accs[1]:.3f} - 0.02; "
        f"runtime {desk_run['elapsed_a'] / 60:.1f} min (< 15)",
    )


def test_criterion_7_conservation_and_determinism(desk_run):
    run_a, run_b = desk_run["a"], desk_run["b"]
    # conservation: every promotion moves an example, nothing appears or vanishes
    labeled_sizes = []
    selected_counts = []
    for k in range(3):
        gen_dir = run_a / f"gen_{k}"
        labeled_sizes.append(
            len([l for l in (gen_dir / "labeled_manifest.tsv").read_text().splitlines() if l])
        )
        selected_counts.append(sum(1 for row in read_promotions(gen_dir / "promotions.tsv") if row[3]))
    manifest_rows = [
        line.split("\t")
        for line in (run_a / "split_manifest.tsv").read_text().splitlines()
        if line
    ]
    n_labeled0 = sum(1 for row in manifest_rows if row[1] == "labeled")
    n_unlabeled0 = sum(1 for row in manifest_rows if row[1] == "unlabeled")
    total = n_labeled0 + n_unlabeled0
    conservation_ok = labeled_sizes[0] == n_labeled0
    for k in range(2):
        conservation_ok = conservation_ok and (
            labeled_sizes[k + 1] == labeled_sizes[k] + selected_counts[k]
        )
        conservation_ok = conservation_ok and labeled_sizes[k + 1] <= total

    identical = []
    mismatched = []
    pairs = [("split_manifest.tsv", run_a / "split_manifest.tsv", run_b / "split_manifest.tsv")]
    for k in range(3):
        for name in GEN_TEXT_FILES:
            pairs.append((f"gen_{k}/{name}", run_a / f"gen_{k}" / name, run_b / f"gen_{k}" / name))
    for label, pa, pb in pairs:
        (identical if pa.read_bytes() == pb.read_bytes() else mismatched).append(label)

    criterion(
        7,
        conservation_ok and not mismatched,
        f"labeled+unlabeled conserved at every boundary (labeled sizes {labeled_sizes}, "
        f"promotions {selected_counts}, pool {total}); rerun from frozen config "
        f"byte-identical on {len(identical)} files"
        + (f"; MISMATCH: {mismatched}" if mismatched else ""),
    )


# ---------------------------------------------------------------------------
# criterion 8: imbalance construction
# ---------------------------------------------------------------------------

def test_criterion_8_imbalance_construction():
    t0 = time.time()
    rng = np.random.default_rng(8)
    examples = []
    for c in range(21):
        for i in range(90):
            examples.append(
                SourceExample(
                    f"class_{c:02d}/img_{i:03d}.png",
                    c,
                    rng.integers(0, 256, (8, 8, 3), np.uint8),
                )
            )
    ds = FolderDataset(examples, [f"class_{c:02d}" for c in range(21)])
    out = make_imbalanced(ds, ImbalanceSpec(gamma=0.1, seed=4242))
    counts = out.class_counts()
    ratio = min(counts) / max(counts)
    ok = abs(ratio - 0.1) <= 1.0 / max(counts)
    elapsed = time.time() - t0
    criterion(
        8,
        ok and elapsed < 1.0,
        f"21 balanced classes x 90 -> min/max ratio {ratio:.4f} within one rounding "
        f"unit of 0.1; {elapsed:.2f}s (< 1s)",
    )
