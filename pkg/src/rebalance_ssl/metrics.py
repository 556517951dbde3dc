"""Evaluation: confusion matrices, per-class precision/recall, and the
report artifacts (tables, bar charts, imbalance trajectory)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .imgdata import LabeledExample
from .model import Classifier, predict_probs

# fixed chart style so re-rendering identical reports is byte-identical
_CHART_DPI = 100
_PNG_METADATA = {"Software": "rebalance-ssl"}


def evaluate(
    classifier: Classifier,
    test: list[LabeledExample],
    mean: np.ndarray,
    std: np.ndarray,
) -> np.ndarray:
    """Confusion matrix (rows = true class, columns = argmax prediction)."""
    if not test:
        raise ValueError("test set must be nonempty")
    probs = predict_probs(classifier, [ex.image for ex in test], mean, std)
    predictions = np.argmax(probs, axis=1)  # ties resolve to the lowest index
    return confusion_from_labels(
        [ex.class_id for ex in test], predictions, classifier.num_classes
    )


def confusion_from_labels(true_ids, pred_ids, num_classes: int) -> np.ndarray:
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(true_ids, pred_ids):
        matrix[t, p] += 1
    return matrix


@dataclass
class EvalReport:
    overall_accuracy: float
    per_class_precision: list[float]
    per_class_recall: list[float]
    balanced_accuracy: float
    labeled_imbalance_ratio: float = 1.0
    generation_index: int = 0
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(**data)


def summarize(
    matrix: np.ndarray,
    generation_index: int = 0,
    labeled_imbalance_ratio: float = 1.0,
) -> EvalReport:
    """Per-class precision/recall and overall/balanced accuracy.

    Zero-denominator precision is 0 by convention so aggregation stays stable.
    """
    matrix = np.asarray(matrix)
    total = matrix.sum()
    if total < 1:
        raise ValueError("confusion matrix must contain at least one example")
    diag = np.diag(matrix).astype(np.float64)
    col = matrix.sum(axis=0).astype(np.float64)
    row = matrix.sum(axis=1).astype(np.float64)
    precision = np.where(col > 0, diag / np.where(col > 0, col, 1.0), 0.0)
    recall = np.where(row > 0, diag / np.where(row > 0, row, 1.0), 0.0)
    return EvalReport(
        overall_accuracy=float(diag.sum() / total),
        per_class_precision=[float(p) for p in precision],
        per_class_recall=[float(r) for r in recall],
        balanced_accuracy=float(recall.mean()),
        labeled_imbalance_ratio=labeled_imbalance_ratio,
        generation_index=generation_index,
    )


def write_metrics_json(report: EvalReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def read_metrics_json(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))


def write_metrics_tsv(report: EvalReport, path, class_names: list[str] | None = None) -> None:
    lines = ["class\tprecision\trecall"]
    for c, (p, r) in enumerate(zip(report.per_class_precision, report.per_class_recall)):
        name = class_names[c] if class_names else str(c)
        lines.append(f"{name}\t{p:.6f}\t{r:.6f}")
    lines.append(f"overall_accuracy\t{report.overall_accuracy:.6f}\t")
    lines.append(f"balanced_accuracy\t{report.balanced_accuracy:.6f}\t")
    Path(path).write_text("\n".join(lines) + "\n")


def _ordinal(k: int) -> str:
    if 10 <= k % 100 <= 20:
        suffix = "th"
    else:
        suffix = {1: "st", 2: "nd", 3: "rd"}.get(k % 10, "th")
    return f"{k}{suffix}"


def generation_label(generation_index: int) -> str:
    return f"Proposed Method ({_ordinal(generation_index + 1)} Gen)"


def render_reports(
    reports: list[EvalReport],
    out_dir,
    class_names: list[str] | None = None,
) -> list[Path]:
    """Write the per-generation accuracy table, per-class precision/recall
    bar charts, and the labeled-imbalance trajectory chart."""
    if not reports:
        raise ValueError("need at least one report to render")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    table = out_dir / "accuracy_table.tsv"
    lines = ["method\toverall_accuracy\tbalanced_accuracy\tlabeled_imbalance_ratio"]
    for rep in reports:
        lines.append(
            f"{generation_label(rep.generation_index)}\t"
            f"{100.0 * rep.overall_accuracy:.2f}\t"
            f"{100.0 * rep.balanced_accuracy:.2f}\t"
            f"{rep.labeled_imbalance_ratio:.4f}"
        )
    table.write_text("\n".join(lines) + "\n")
    written.append(table)

    for rep in reports:
        num_classes = len(rep.per_class_precision)
        names = class_names if class_names else [str(c) for c in range(num_classes)]
        x = np.arange(num_classes)
        fig, ax = plt.subplots(figsize=(max(6.0, 0.6 * num_classes), 4.0))
        ax.bar(x - 0.2, rep.per_class_precision, width=0.4, label="precision")
        ax.bar(x + 0.2, rep.per_class_recall, width=0.4, label="recall")
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=45, ha="right")
        ax.set_ylim(0.0, 1.0)
        ax.set_ylabel("rate")
        ax.set_title(f"Per-class precision and recall, generation {rep.generation_index}")
        ax.legend()
        fig.tight_layout()
        chart = out_dir / f"precision_recall_gen_{rep.generation_index}.png"
        fig.savefig(chart, dpi=_CHART_DPI, metadata=_PNG_METADATA)
        plt.close(fig)
        written.append(chart)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    gens = [rep.generation_index for rep in reports]
    ratios = [rep.labeled_imbalance_ratio for rep in reports]
    ax.plot(gens, ratios, marker="o")
    ax.set_xticks(gens)
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("generation")
    ax.set_ylabel("labeled min/max class ratio")
    ax.set_title("Labeled-set imbalance across generations")
    fig.tight_layout()
    trajectory = out_dir / "imbalance_trajectory.png"
    fig.savefig(trajectory, dpi=_CHART_DPI, metadata=_PNG_METADATA)
    plt.close(fig)
    written.append(trajectory)

    summary = out_dir / "report.md"
    text = ["# Run report", "", "| method | overall acc (%) | balanced acc (%) | labeled ratio |", "|---|---|---|---|"]
    for rep in reports:
        text.append(
            f"| {generation_label(rep.generation_index)} "
            f"| {100.0 * rep.overall_accuracy:.2f} "
            f"| {100.0 * rep.balanced_accuracy:.2f} "
            f"| {rep.labeled_imbalance_ratio:.4f} |"
        )
    text += ["", "Charts: per-generation `precision_recall_gen_<k>.png`, `imbalance_trajectory.png`.", ""]
    summary.write_text("\n".join(text))
    written.append(summary)
    return written
