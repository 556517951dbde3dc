"""Class-rebalancing generation driver.

After each trained generation, confident pseudo-labels are harvested from
the unlabeled pool and promoted into the labeled set stochastically: a
class's promotion probability is an adaptive sampling rate derived from
the current labeled class counts, equal to 1 for the rarest class and
decreasing as a class gets more labeled examples.  The model is then
retrained from scratch on the expanded labeled set, which walks the
labeled distribution toward balance generation by generation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import augment, metrics
from .fixmatch import (
    PseudoLabel,
    TrainConfig,
    pseudo_label,
    train_generation,
    write_trace_csv,
)
from .imgdata import (
    DatasetSplit,
    LabeledExample,
    Provenance,
    UnlabeledExample,
)
from .model import Classifier, OptimizerConfig, predict_probs

log = logging.getLogger(__name__)

_SELECT_STREAM = 7
_GEN_SEED_STREAM = 8


def class_ranks(counts: list[int]) -> list[int]:
    """Rank per class id: 1 = largest count, ties broken by ascending class id."""
    if len(counts) < 2:
        raise ValueError("need at least 2 classes")
    order = sorted(range(len(counts)), key=lambda c: (-counts[c], c))
    ranks = [0] * len(counts)
    for position, c in enumerate(order):
        ranks[c] = position + 1
    return ranks


@dataclass(frozen=True)
class SamplingRates:
    mu: list[float]  # indexed by class id, each in (0, 1]
    alpha: float


def sampling_rates(counts: list[int], alpha: float = 1.0 / 3.0) -> SamplingRates:
    """Adaptive per-class promotion rates from labeled class counts.

    With counts sorted descending as N_1 >= ... >= N_L, the class at rank l
    receives (N_{L+1-l} / N_1) ** alpha, re-indexed back to class-id order.
    The rarest class therefore gets exactly 1 (computed symbolically, no
    floating-point drift) and rates decrease as counts grow.  Classes with
    equal counts share one rate (the largest within the tie).  A zero-count
    class is treated as an extreme minority with count 1, so it gets rate 1
    and every rate stays strictly positive.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if any(c < 0 for c in counts):
        raise ValueError("counts must be nonnegative")
    num_classes = len(counts)
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if max(counts) == 0:
        raise ValueError("labeled set is empty: all class counts are 0")
    counts = [max(c, 1) for c in counts]
    order = sorted(range(num_classes), key=lambda c: (-counts[c], c))
    sorted_desc = [counts[c] for c in order]
    n1 = sorted_desc[0]
    raw = []
    for l in range(1, num_classes + 1):
        mirror = sorted_desc[num_classes - l]
        raw.append(1.0 if mirror == n1 else (mirror / n1) ** alpha)
    # `raw` is nondecreasing in rank; tied counts share the group's last value
    mu_by_rank = list(raw)
    i = 0
    while i < num_classes:
        j = i
        while j + 1 < num_classes and sorted_desc[j + 1] == sorted_desc[i]:
            j += 1
        for k in range(i, j + 1):
            mu_by_rank[k] = raw[j]
        i = j + 1
    mu = [0.0] * num_classes
    for position, c in enumerate(order):
        mu[c] = mu_by_rank[position]
    return SamplingRates(mu, alpha)


def harvest_pseudo_labels(
    classifier: Classifier,
    unlabeled: list[UnlabeledExample],
    tau: float,
    mean: np.ndarray,
    std: np.ndarray,
) -> list[PseudoLabel]:
    """Confident predictions on the raw (un-augmented, normalized) unlabeled
    images, in deterministic uid order."""
    if not unlabeled:
        return []
    ordered = sorted(unlabeled, key=lambda ex: ex.uid)
    probs = predict_probs(classifier, [ex.image for ex in ordered], mean, std)
    harvested = []
    for ex, row in zip(ordered, probs):
        hit = pseudo_label(row, tau)
        if hit is not None:
            harvested.append(PseudoLabel(ex.uid, hit[0], hit[1]))
    return harvested


def select_for_promotion(
    candidates: list[PseudoLabel],
    rates: SamplingRates,
    rng: np.random.Generator,
) -> list[PseudoLabel]:
    """Keep each candidate independently with its class's rate.

    Candidates are processed in sorted-uid order so an identical stream
    reproduces the identical selection; rate-1 classes always pass because
    the uniform draw lies in [0, 1).
    """
    selected = []
    for cand in sorted(candidates, key=lambda c: c.unlabeled_id):
        if rng.random() < rates.mu[cand.class_id]:
            selected.append(cand)
    return selected


def expand_labeled_set(
    labeled: list[LabeledExample],
    unlabeled: list[UnlabeledExample],
    selected: list[PseudoLabel],
    generation: int,
    keep_in_unlabeled: bool = False,
) -> tuple[list[LabeledExample], list[UnlabeledExample]]:
    """Move selected pseudo-labeled examples into the labeled set.

    ``keep_in_unlabeled`` leaves a copy in the unlabeled pool (the variant
    that re-uses the full pool each generation) instead of extracting it.
    """
    ids = [c.unlabeled_id for c in selected]
    if len(ids) != len(set(ids)):
        raise ValueError("duplicate unlabeled id in selection")
    by_uid = {ex.uid: ex for ex in unlabeled}
    missing = [uid for uid in ids if uid not in by_uid]
    if missing:
        raise ValueError(f"selected ids not present in unlabeled pool: {missing[:5]}")
    new_labeled = list(labeled)
    for cand in selected:
        ex = by_uid[cand.unlabeled_id]
        new_labeled.append(
            LabeledExample(
                ex.uid,
                ex.image,
                cand.class_id,
                Provenance.pseudo(generation, cand.confidence),
            )
        )
    if keep_in_unlabeled:
        new_unlabeled = list(unlabeled)
    else:
        moved = set(ids)
        new_unlabeled = [ex for ex in unlabeled if ex.uid not in moved]
    return new_labeled, new_unlabeled


# ---------------------------------------------------------------------------
# generation loop with persistence
# ---------------------------------------------------------------------------

GEN_FILES = ("checkpoint.pt", "labeled_manifest.tsv", "promotions.tsv", "metrics.json", "trace.csv")


@dataclass
class GenerationState:
    """One trained generation: the sets it used and what its model produced."""

    generation_index: int
    labeled_counts: list[int]
    num_promoted_per_class: list[int]  # promotions *into* this generation's labeled set
    report: metrics.EvalReport
    checkpoint_path: str


def imbalance_ratio(counts: list[int]) -> float:
    mx = max(counts)
    return min(counts) / mx if mx > 0 else 0.0


def write_labeled_manifest(labeled: list[LabeledExample], path) -> None:
    lines = []
    for ex in labeled:
        p = ex.provenance
        lines.append(f"{ex.path}\t{ex.class_id}\t{p.kind}\t{p.generation}\t{p.confidence:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_promotions(
    candidates: list[PseudoLabel],
    selected: list[PseudoLabel],
    rates: SamplingRates,
    path,
) -> None:
    chosen = {c.unlabeled_id for c in selected}
    lines = []
    for cand in sorted(candidates, key=lambda c: c.unlabeled_id):
        lines.append(
            f"{cand.unlabeled_id}\t{cand.class_id}\t{cand.confidence:.6f}\t"
            f"{1 if cand.unlabeled_id in chosen else 0}\t{rates.mu[cand.class_id]:.6f}"
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_promotions(path) -> list[tuple[str, int, float, bool, float]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line:
            continue
        uid, class_id, conf, sel, mu = line.split("\t")
        rows.append((uid, int(class_id), float(conf), sel == "1", float(mu)))
    return rows


def generation_complete(gen_dir: Path) -> bool:
    return all((gen_dir / name).exists() for name in GEN_FILES)


@dataclass(frozen=True)
class RebalanceConfig:
    generations: int = 3
    alpha: float = 1.0 / 3.0
    promote_tau: float = 0.95
    keep_in_unlabeled: bool = False

    def __post_init__(self):
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0.0 < self.promote_tau <= 1.0:
            raise ValueError("promote_tau must lie in (0, 1]")


def _generation_seed(base_seed: int, generation: int) -> int:
    return int(np.random.default_rng((base_seed, _GEN_SEED_STREAM, generation)).integers(0, 2**63))


def run_generations(
    split: DatasetSplit,
    rebalance_config: RebalanceConfig,
    train_config: TrainConfig,
    optimizer_config: OptimizerConfig,
    weak_policy: augment.WeakPolicy,
    strong_policy: augment.StrongPolicy,
    arch: str,
    out_dir,
) -> list[GenerationState]:
    """Train, evaluate, harvest, select, and expand for each generation.

    Generation 0 trains on the original labeled set (it promotes nothing
    into itself); each later generation trains from scratch on the set
    expanded by its predecessor's promotions.  Every generation persists
    ``checkpoint.pt``, ``labeled_manifest.tsv``, ``promotions.tsv``,
    ``metrics.json`` and ``trace.csv`` under ``gen_<k>/``, and a completed
    run can resume from any persisted generation: completed directories
    are replayed from disk instead of retrained.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_seed = train_config.seed

    labeled = list(split.labeled)
    unlabeled = list(split.unlabeled)
    total_examples = len(labeled) + len(unlabeled)
    promoted_into = [0] * split.num_classes  # promotions that formed the current labeled set
    states: list[GenerationState] = []

    for gen in range(rebalance_config.generations):
        gen_dir = out_dir / f"gen_{gen}"
        counts = _labeled_counts(labeled, split.num_classes)

        if generation_complete(gen_dir):
            # replay a completed generation from its artifacts
            report = metrics.read_metrics_json(gen_dir / "metrics.json")
            states.append(
                GenerationState(
                    gen, counts, list(promoted_into), report, str(gen_dir / "checkpoint.pt")
                )
            )
            labeled, unlabeled, promoted_into = _replay_promotions(
                gen_dir, labeled, unlabeled, gen, rebalance_config.keep_in_unlabeled, split.num_classes
            )
            log.info("generation %d already complete; replayed from %s", gen, gen_dir)
            continue

        gen_dir.mkdir(parents=True, exist_ok=True)
        gen_train_config = replace(train_config, seed=_generation_seed(base_seed, gen))
        result = train_generation(
            labeled,
            unlabeled,
            split.num_classes,
            gen_train_config,
            optimizer_config,
            weak_policy,
            strong_policy,
            arch=arch,
            checkpoint_dir=gen_dir,
        )
        write_trace_csv(result.trace, gen_dir / "trace.csv")
        write_labeled_manifest(labeled, gen_dir / "labeled_manifest.tsv")

        matrix = metrics.evaluate(result.classifier, split.test, result.mean, result.std)
        report = metrics.summarize(
            matrix,
            generation_index=gen,
            labeled_imbalance_ratio=imbalance_ratio(counts),
        )
        report.extras = {
            "labeled_counts": counts,
            "num_promoted_per_class": list(promoted_into),
            "seed": base_seed,
            "class_names": list(split.class_names),
        }
        metrics.write_metrics_json(report, gen_dir / "metrics.json")
        metrics.write_metrics_tsv(report, gen_dir / "metrics.tsv", split.class_names)
        states.append(
            GenerationState(gen, counts, list(promoted_into), report, str(gen_dir / "checkpoint.pt"))
        )

        # harvest + stochastic expansion feeding the next generation
        rates = sampling_rates(counts, rebalance_config.alpha)
        if unlabeled:
            candidates = harvest_pseudo_labels(
                result.classifier, unlabeled, rebalance_config.promote_tau, result.mean, result.std
            )
            rng = np.random.default_rng((base_seed, _SELECT_STREAM, gen))
            selected = select_for_promotion(candidates, rates, rng)
            write_promotions(candidates, selected, rates, gen_dir / "promotions.tsv")
            labeled, unlabeled = expand_labeled_set(
                labeled, unlabeled, selected, gen + 1, rebalance_config.keep_in_unlabeled
            )
            promoted_into = [0] * split.num_classes
            for cand in selected:
                promoted_into[cand.class_id] += 1
        else:
            log.warning("unlabeled pool exhausted at generation %d; no expansion", gen)
            write_promotions([], [], rates, gen_dir / "promotions.tsv")
            promoted_into = [0] * split.num_classes

        if not rebalance_config.keep_in_unlabeled:
            assert len(labeled) + len(unlabeled) == total_examples
    return states


def _labeled_counts(labeled: list[LabeledExample], num_classes: int) -> list[int]:
    counts = [0] * num_classes
    for ex in labeled:
        counts[ex.class_id] += 1
    return counts


def _replay_promotions(gen_dir, labeled, unlabeled, gen, keep_in_unlabeled, num_classes):
    rows = read_promotions(gen_dir / "promotions.tsv")
    selected = [
        PseudoLabel(uid, class_id, conf) for uid, class_id, conf, sel, _mu in rows if sel
    ]
    labeled, unlabeled = expand_labeled_set(labeled, unlabeled, selected, gen + 1, keep_in_unlabeled)
    promoted = [0] * num_classes
    for cand in selected:
        promoted[cand.class_id] += 1
    return labeled, unlabeled, promoted
