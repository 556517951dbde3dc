"""Command-line surface: ``prepare``, ``run``, ``report`` and ``dump-augment``.

Every run directory receives a frozen copy of the resolved config and its
hash, so any artifact can be reproduced from that copy alone.  The
``REBALANCE_SSL_THREADS`` environment variable bounds worker parallelism.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import augment, metrics
from .config import (
    RunConfig,
    apply_overrides,
    config_hash,
    load_config,
    to_yaml,
)
from .errors import ConfigError, TrainingDiverged
from .imgdata import DatasetSplit, build_split, load_dataset, write_manifest
from .rebalance import run_generations
from .synthetic import generate_synthetic

log = logging.getLogger(__name__)

FROZEN_CONFIG = "config.resolved.yaml"
CONFIG_HASH_FILE = "config.hash"
SPLIT_MANIFEST = "split_manifest.tsv"


def _limit_threads() -> None:
    value = os.environ.get("REBALANCE_SSL_THREADS")
    if value:
        import torch

        torch.set_num_threads(max(1, int(value)))


def _resolve_config(args) -> RunConfig:
    if args.config:
        config = load_config(args.config)
    else:
        config = RunConfig()
    config = apply_overrides(
        config,
        seed=args.seed,
        generations=getattr(args, "generations", None),
        alpha=getattr(args, "alpha", None),
        output=args.output,
        dataset=getattr(args, "dataset", None),
        root=getattr(args, "root", None),
        labeled_fraction=getattr(args, "labeled_fraction", None),
        arch=getattr(args, "arch", None),
    )
    return config.resolved()


def _load_source(config: RunConfig):
    if config.dataset.name == "synthetic":
        s = config.dataset.synthetic
        return generate_synthetic(
            num_classes=s.num_classes,
            per_class=s.per_class,
            image_size=s.image_size,
            noise_sigma=s.noise_sigma,
            freq_jitter=s.freq_jitter,
            seed=config.seed,
        )
    if config.dataset.root is None:
        raise ConfigError(
            f"dataset.root is required for dataset {config.dataset.name!r}"
        )
    return load_dataset(config.dataset.root)


def _build_split(config: RunConfig) -> DatasetSplit:
    source = _load_source(config)
    return build_split(
        source,
        config.dataset.test_fraction,
        config.require_labeled_fraction(),
        config.dataset.imbalance_spec(config.seed),
        config.seed,
    )


def _print_class_counts(split: DatasetSplit) -> None:
    counts = split.labeled_counts()
    unl = len(split.unlabeled)
    print(f"{'class':<24}{'labeled':>8}")
    for name, count in zip(split.class_names, counts):
        print(f"{name:<24}{count:>8}")
    print(f"{'(unlabeled pool)':<24}{unl:>8}")
    print(f"{'(test)':<24}{len(split.test):>8}")


def _freeze_config(config: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / FROZEN_CONFIG).write_text(to_yaml(config))
    (out_dir / CONFIG_HASH_FILE).write_text(config_hash(config) + "\n")


def cmd_prepare(args) -> int:
    config = _resolve_config(args)
    print(to_yaml(config), end="")
    split = _build_split(config)
    out_dir = Path(config.output)
    _freeze_config(config, out_dir)
    write_manifest(split, out_dir / SPLIT_MANIFEST)
    _print_class_counts(split)
    print(f"manifest written to {out_dir / SPLIT_MANIFEST}")
    return 0


def cmd_run(args) -> int:
    config = _resolve_config(args)
    print(to_yaml(config), end="")
    out_dir = Path(config.output)

    if args.resume:
        resume_dir = Path(args.resume)
        # accept either the run dir or one of its gen_<k> subdirectories
        if resume_dir.name.startswith("gen_") and resume_dir.parent != Path("."):
            resume_dir = resume_dir.parent
        frozen = resume_dir / CONFIG_HASH_FILE
        if not frozen.is_file():
            raise ConfigError(f"--resume {args.resume}: no frozen config hash found")
        if frozen.read_text().strip() != config_hash(config):
            raise ConfigError(
                "--resume refused: resolved config does not match the frozen "
                "config of the checkpointed run"
            )
        out_dir = resume_dir
    else:
        _freeze_config(config, out_dir)

    split = _build_split(config)
    write_manifest(split, out_dir / SPLIT_MANIFEST)
    states = run_generations(
        split,
        config.rebalance,
        config.train,
        config.optimizer,
        config.augment.weak_policy(),
        config.augment.strong_policy(),
        config.arch,
        out_dir,
    )
    reports = [state.report for state in states]
    metrics.render_reports(reports, out_dir / "report", split.class_names)
    for state in states:
        print(
            f"gen {state.generation_index}: "
            f"acc {state.report.overall_accuracy:.4f} "
            f"balanced {state.report.balanced_accuracy:.4f} "
            f"labeled ratio {state.report.labeled_imbalance_ratio:.4f}"
        )
    print(f"report written to {out_dir / 'report'}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"run directory {run_dir} not found")
    gen_dirs = sorted(
        (p for p in run_dir.iterdir() if p.is_dir() and p.name.startswith("gen_")),
        key=lambda p: int(p.name.split("_")[1]),
    )
    if not gen_dirs:
        raise ConfigError(f"run directory {run_dir} contains no generation directories")
    reports = []
    for gen_dir in gen_dirs:
        metrics_file = gen_dir / "metrics.json"
        if not metrics_file.is_file():
            raise ConfigError(f"generation {gen_dir.name} has no metrics.json")
        reports.append(metrics.read_metrics_json(metrics_file))
    class_names = reports[0].extras.get("class_names")
    written = metrics.render_reports(reports, run_dir / "report", class_names)
    for path in written:
        print(path)
    return 0


def cmd_dump_augment(args) -> int:
    config = _resolve_config(args)
    out_dir = Path(config.output) / "augment_gallery"
    out_dir.mkdir(parents=True, exist_ok=True)
    source = _load_source(config)
    weak = config.augment.weak_policy()
    strong = config.augment.strong_policy()
    rng_base = config.seed
    count = min(args.count, len(source.examples))
    step = max(1, len(source.examples) // count)
    written = []
    for k in range(count):
        ex = source.examples[k * step]
        pairs = {
            "before": ex.image,
            "weak": augment.weak_augment(ex.image, weak, augment.stream_for(rng_base, 11, 0, k)),
            "strong": augment.strong_augment(ex.image, strong, augment.stream_for(rng_base, 12, 0, k)),
        }
        for suffix, img in pairs.items():
            path = out_dir / f"{k:03d}_{suffix}.png"
            PILImage.fromarray(img).save(path)
            written.append(path)
    print(f"{len(written)} images written to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rebalance-ssl",
        description="Semi-supervised image classification with iterative class rebalancing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=str, default=None, help="YAML config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--output", type=str, default=None, help="run directory")
        p.add_argument(
            "--dataset",
            choices=["eurosat", "ucm", "whu-rs19", "synthetic", "custom"],
            default=None,
        )
        p.add_argument("--root", type=str, default=None, help="dataset root folder")
        p.add_argument("--labeled-fraction", dest="labeled_fraction", type=float, default=None)
        p.add_argument("--arch", choices=["wrn28-2", "small"], default=None)

    p_prepare = sub.add_parser("prepare", help="build splits and write manifests")
    add_common(p_prepare)
    p_prepare.set_defaults(func=cmd_prepare)

    p_run = sub.add_parser("run", help="run the generation pipeline end to end")
    add_common(p_run)
    p_run.add_argument("--generations", type=int, default=None)
    p_run.add_argument("--alpha", type=float, default=None)
    p_run.add_argument("--resume", type=str, default=None, help="resume a persisted run dir")
    p_run.set_defaults(func=cmd_run)

    p_report = sub.add_parser("report", help="re-render tables and charts from a run dir")
    p_report.add_argument("run_dir", type=str)
    p_report.set_defaults(func=cmd_report)

    p_dump = sub.add_parser("dump-augment", help="write before/after augmentation PNG pairs")
    add_common(p_dump)
    p_dump.add_argument("--count", type=int, default=8)
    p_dump.set_defaults(func=cmd_dump_augment)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    _limit_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
