"""Run configuration: nested dataclasses with a YAML file format.

Precedence is flags > file values > defaults.  A resolved config
round-trips (parse -> serialize -> parse) identically, and every run
directory keeps a frozen copy plus its hash so artifacts stay
reproducible from that copy alone.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .augment import StrongPolicy, WeakPolicy
from .errors import ConfigError
from .fixmatch import TrainConfig
from .imgdata import ImbalanceSpec
from .model import OptimizerConfig
from .rebalance import RebalanceConfig

DATASET_NAMES = ("eurosat", "ucm", "whu-rs19", "synthetic", "custom")


@dataclass(frozen=True)
class SyntheticConfig:
    num_classes: int = 3
    per_class: int | tuple[int, ...] = 167
    image_size: int = 32
    noise_sigma: float = 24.0
    freq_jitter: float = 0.35

    def __post_init__(self):
        if isinstance(self.per_class, list):
            object.__setattr__(self, "per_class", tuple(self.per_class))


@dataclass(frozen=True)
class DatasetConfig:
    name: str = "synthetic"
    root: str | None = None
    test_fraction: float = 0.10
    # no principled default exists; must be set explicitly in the config
    labeled_fraction: float | None = None
    gamma: float = 0.1
    profile: str = "exponential"
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def __post_init__(self):
        if self.name not in DATASET_NAMES:
            raise ConfigError(f"dataset.name must be one of {DATASET_NAMES}, got {self.name!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("dataset.test_fraction must lie in (0, 1)")

    def imbalance_spec(self, seed: int) -> ImbalanceSpec:
        return ImbalanceSpec(self.gamma, self.profile, seed)


@dataclass(frozen=True)
class AugmentConfig:
    num_ops: int = 2
    flip_probability: float = 0.5
    max_shift_fraction: float = 0.125
    crop: bool = True

    def weak_policy(self) -> WeakPolicy:
        return WeakPolicy(self.flip_probability, self.max_shift_fraction, self.crop)

    def strong_policy(self) -> StrongPolicy:
        return StrongPolicy(num_ops=self.num_ops)


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    rebalance: RebalanceConfig = field(default_factory=RebalanceConfig)
    arch: str = "small"
    seed: int = 42
    output: str = "runs/default"

    def to_dict(self) -> dict:
        def plain(pairs):
            return {k: list(v) if isinstance(v, tuple) else v for k, v in pairs}

        return asdict(self, dict_factory=plain)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        try:
            sections = {}
            if "dataset" in data:
                ds = dict(data.pop("dataset"))
                if "synthetic" in ds:
                    ds["synthetic"] = SyntheticConfig(**ds["synthetic"])
                sections["dataset"] = DatasetConfig(**ds)
            for key, klass in (
                ("train", TrainConfig),
                ("optimizer", OptimizerConfig),
                ("augment", AugmentConfig),
                ("rebalance", RebalanceConfig),
            ):
                if key in data:
                    sections[key] = klass(**data.pop(key))
            known = {f.name for f in fields(cls)}
            unknown = set(data) - known
            if unknown:
                raise ConfigError(f"unknown config fields: {sorted(unknown)}")
            return cls(**sections, **data)
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"bad config value: {exc}") from exc

    def resolved(self) -> "RunConfig":
        """Sync the master seed into the training section."""
        return replace(self, train=replace(self.train, seed=self.seed))

    def require_labeled_fraction(self) -> float:
        if self.dataset.labeled_fraction is None:
            raise ConfigError(
                "dataset.labeled_fraction is required (there is no default); "
                "set it in the config file or via --labeled-fraction"
            )
        if not 0.0 < self.dataset.labeled_fraction < 1.0:
            raise ConfigError("dataset.labeled_fraction must lie in (0, 1)")
        return self.dataset.labeled_fraction


def to_yaml(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=True, default_flow_style=False)


def from_yaml(text: str) -> RunConfig:
    data = yaml.safe_load(text)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping at the top level")
    return RunConfig.from_dict(data)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return from_yaml(path.read_text())


def config_hash(config: RunConfig) -> str:
    """Hash of everything that affects artifacts.

    The output path and the generation count are excluded: gen_<k>
    artifacts do not depend on where they live or on how many further
    generations follow, so a run may be resumed to extend it.
    """
    data = config.to_dict()
    data.pop("output", None)
    data["rebalance"].pop("generations", None)
    canon = yaml.safe_dump(data, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def apply_overrides(config: RunConfig, **overrides) -> RunConfig:
    """Apply flat CLI flag overrides onto a parsed config."""
    if overrides.get("seed") is not None:
        config = replace(
            config,
            seed=overrides["seed"],
            train=replace(config.train, seed=overrides["seed"]),
        )
    if overrides.get("generations") is not None:
        config = replace(
            config, rebalance=replace(config.rebalance, generations=overrides["generations"])
        )
    if overrides.get("alpha") is not None:
        config = replace(config, rebalance=replace(config.rebalance, alpha=overrides["alpha"]))
    if overrides.get("output") is not None:
        config = replace(config, output=overrides["output"])
    if overrides.get("dataset") is not None:
        config = replace(config, dataset=replace(config.dataset, name=overrides["dataset"]))
    if overrides.get("root") is not None:
        config = replace(config, dataset=replace(config.dataset, root=overrides["root"]))
    if overrides.get("labeled_fraction") is not None:
        config = replace(
            config,
            dataset=replace(config.dataset, labeled_fraction=overrides["labeled_fraction"]),
        )
    if overrides.get("arch") is not None:
        arch = {"wrn28-2": "wrn28-2", "small": "small"}[overrides["arch"]]
        config = replace(config, arch=arch)
    return config
