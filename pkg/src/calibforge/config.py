"""
Resolved Run Configuration
==========================

:class:`RunConfig` is the merged view of every setting a command uses: data source, split,
architecture, objective, optimiser and Monte-Carlo settings. Commands write it to
``config.json`` before doing any work, and ``--config config.json`` replays the run.
"""

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Union

import psutil

from .calib import BIN_KEYS, DEFAULT_BINS
from .data import BlobsSpec, Dataset, SplitSpec, Standardizer, inject_label_noise, load_csv, split
from .errors import ConfigError, DataFormatError
from .loss import LossConfig
from .model import ModelSpec
from .presets import RunPreset, get_preset
from .stochastic import StochasticConfig
from .trainer import TrainConfig

logger = logging.getLogger(__name__)

CONFIG_FORMAT_VERSION = 1
HOST_FILE = "host.json"
THREADS_ENV = "CALIBFORGE_THREADS"
DATA_KINDS = ("blobs", "csv")


def resolve_threads(flag: Optional[int] = None) -> int:
    """
    Worker thread count: the flag, else ``$CALIBFORGE_THREADS``, else 1.

    0 means one thread per physical core.
    """
    value: Union[int, str, None] = flag
    if value is None:
        value = os.environ.get(THREADS_ENV, "1")
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    if threads < 0:
        raise ConfigError(f"threads must be >= 0, got {threads}")
    if threads == 0:
        threads = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
    return threads


def host_info() -> Dict[str, Any]:
    return {
        "cpus_logical": psutil.cpu_count(),
        "cpus_physical": psutil.cpu_count(logical=False),
        "memory_bytes": psutil.virtual_memory().total,
    }


@dataclass(frozen=True)
class DataSource:
    """
    Where examples come from.

    Args:
        kind: "blobs" (synthetic) or "csv"
        path: CSV file when kind is "csv"
        blobs: Generator settings when kind is "blobs"
        label_noise: Fraction of labels resampled to another class
        standardize: z-score features with train-split statistics
    """
    kind: str = "blobs"
    path: Optional[str] = None
    blobs: BlobsSpec = field(default_factory=BlobsSpec)
    label_noise: float = 0.0
    standardize: bool = False

    def __post_init__(self):
        if self.kind not in DATA_KINDS:
            raise ConfigError(f"unknown data source {self.kind!r}; choose one of {', '.join(DATA_KINDS)}")
        if self.kind == "csv" and not self.path:
            raise ConfigError("a csv data source needs a path")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ConfigError(f"label noise must lie in [0, 1], got {self.label_noise}")

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "path": self.path, "blobs": self.blobs.to_dict(),
                "label_noise": self.label_noise, "standardize": self.standardize}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "DataSource":
        return cls(kind=d["kind"], path=d.get("path"), blobs=BlobsSpec(**d["blobs"]),
                   label_noise=float(d.get("label_noise", 0.0)),
                   standardize=bool(d.get("standardize", False)))


@dataclass(frozen=True)
class Splits:
    train: Dataset
    holdout: Dataset
    test: Dataset
    standardizer: Optional[Standardizer] = None


@dataclass(frozen=True)
class RunConfig:
    """
    Every setting of a run, fully resolved.

    ``train.seed`` drives initialisation, batch order, training masks and Monte-Carlo
    inference; ``data_seed`` drives data generation, label noise and the split, so runs
    that differ only in ``train.seed`` share their data.
    """
    model: ModelSpec
    train: TrainConfig
    split: SplitSpec
    source: DataSource = field(default_factory=DataSource)
    data_seed: int = 0
    out_dir: str = "run"
    threads: int = 1
    bins: int = DEFAULT_BINS
    bin_key: str = "max"

    def __post_init__(self):
        if self.bins < 1:
            raise ConfigError(f"bins must be >= 1, got {self.bins}")
        if self.bin_key not in BIN_KEYS:
            raise ConfigError(f"unknown bin key {self.bin_key!r}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")

    @property
    def seed(self) -> int:
        return self.train.seed

    @property
    def loss(self) -> LossConfig:
        return self.train.loss

    @property
    def stochastic(self) -> StochasticConfig:
        return self.train.stochastic

    def with_loss(self, loss: LossConfig) -> "RunConfig":
        return replace(self, train=replace(self.train, loss=loss))

    def with_seed(self, seed: int) -> "RunConfig":
        """Same data, new training and inference seed."""
        return replace(self, train=replace(self.train, seed=seed,
                                           stochastic=replace(self.train.stochastic, seed=seed)))

    @classmethod
    def from_preset(cls, preset: Union[str, RunPreset], loss: Optional[LossConfig] = None,
                    seed: int = 0, data_seed: Optional[int] = None, **overrides: Any) -> "RunConfig":
        """
        Build a blobs run from a preset.

        Keyword overrides may name any :class:`RunConfig` field (``out_dir``, ``threads``,
        ``bins``, ``bin_key``) or any :class:`TrainConfig` field (``epochs``, ``lr``, ...).
        """
        p = get_preset(preset) if isinstance(preset, str) else preset
        data_seed = seed if data_seed is None else data_seed
        loss = loss or LossConfig(samples=p.samples, weight_decay=p.weight_decay)
        run_fields = {k: overrides.pop(k) for k in ("out_dir", "threads", "bins", "bin_key")
                      if k in overrides}
        train_fields = dict(epochs=p.epochs, batch_size=p.batch_size, lr=p.lr, momentum=p.momentum,
                            decay=p.decay, milestones=p.milestones)
        train_fields.update(overrides)
        threads = run_fields.get("threads", 1)
        return cls(
            model=ModelSpec(
                input_dim=p.blobs.dim,
                num_classes=p.blobs.num_classes,
                hidden=p.hidden,
                keep_prob=p.keep_prob,
                residual_blocks=p.residual_blocks,
                survival_prob=p.survival_prob,
            ),
            train=TrainConfig(
                loss=loss,
                stochastic=StochasticConfig(samples=loss.samples, seed=seed, threads=threads),
                seed=seed,
                **train_fields,
            ),
            split=SplitSpec.from_sizes(*p.split_sizes, seed=data_seed),
            source=DataSource(kind="blobs", blobs=p.blobs, label_noise=p.label_noise),
            data_seed=data_seed,
            **run_fields,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": CONFIG_FORMAT_VERSION,
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "loss": self.loss.to_dict(),
            "stochastic": {"samples": self.stochastic.samples, "seed": self.stochastic.seed,
                           "threads": self.stochastic.threads},
            "split": self.split.to_dict(),
            "data": self.source.to_dict(),
            "data_seed": self.data_seed,
            "out_dir": self.out_dir,
            "threads": self.threads,
            "bins": self.bins,
            "bin_key": self.bin_key,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        if d.get("format_version") != CONFIG_FORMAT_VERSION:
            raise DataFormatError(f"unsupported config format_version {d.get('format_version')!r}")
        try:
            train = dict(d["train"])
            train["milestones"] = tuple(train["milestones"])
            return cls(
                model=ModelSpec.from_dict(d["model"]),
                train=TrainConfig(loss=LossConfig.from_dict(d["loss"]),
                                  stochastic=StochasticConfig(**d["stochastic"]), **train),
                split=SplitSpec(**d["split"]),
                source=DataSource.from_dict(d["data"]),
                data_seed=int(d["data_seed"]),
                out_dir=d["out_dir"],
                threads=int(d["threads"]),
                bins=int(d["bins"]),
                bin_key=d["bin_key"],
            )
        except (KeyError, TypeError) as e:
            raise DataFormatError(f"malformed run config: {e}") from e

    def write_json(self, path: Union[str, Path]) -> Path:
        """Write the replayable config; host facts go to a sibling ``host.json``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        host = path.with_name(HOST_FILE)
        host.write_text(json.dumps(host_info(), indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read_json(cls, path: Union[str, Path]) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataFormatError(f"{path}: not a JSON config: {e}") from e
        return cls.from_dict(doc)


def load_source(source: DataSource, data_seed: int) -> Dataset:
    """The full dataset of a source, with label noise applied."""
    if source.kind == "blobs":
        ds = source.blobs.generate(data_seed)
    else:
        ds = load_csv(source.path)  # type: ignore[arg-type]
    return inject_label_noise(ds, source.label_noise, data_seed)


def load_splits(run: RunConfig) -> Splits:
    """Generate or read the data and split it; standardise with train statistics if asked."""
    train_set, holdout, test = split(load_source(run.source, run.data_seed), run.split)
    if not run.source.standardize:
        return Splits(train_set, holdout, test)
    scaler = Standardizer.fit(train_set)
    return Splits(scaler.transform(train_set), scaler.transform(holdout), scaler.transform(test), scaler)


__all__ = [
    "CONFIG_FORMAT_VERSION",
    "THREADS_ENV",
    "DataSource",
    "RunConfig",
    "Splits",
    "resolve_threads",
    "host_info",
    "load_source",
    "load_splits",
]
