"""
Datasets, Splits and Mini-batches
=================================

Desk-scale classification data: Gaussian blobs with controllable overlap, label-noise
injection, CSV files, seeded train/holdout/test splits and per-epoch shuffled batches.

Every randomised function here is a pure function of its inputs and seed. Each draws from
its own labelled :class:`~calibforge.rng.RngStream`, so changing one step (for example the
noise rate) never shifts the draws of another.

Example:
    >>> from calibforge.data import BlobsSpec, SplitSpec, inject_label_noise, split
    >>> ds = inject_label_noise(BlobsSpec(num_classes=4, per_class=250).generate(seed=7), 0.2, seed=7)
    >>> train, holdout, test = split(ds, SplitSpec(0.8, 0.1, 0.1, seed=7))
    >>> len(train), len(holdout), len(test)
    (800, 100, 100)
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, Tuple, Union

import numpy as np

from .errors import ConfigError, DataFormatError, ShapeError
from .rng import RngStream

logger = logging.getLogger(__name__)

# Absorbs float error in N·f so that fractions built from exact sizes round back to them.
_SIZE_EPS = 1e-9


@dataclass(frozen=True)
class Dataset:
    """
    Features, labels and stable example ids.

    Attributes:
        x: Features ``[N×d]`` (finite float64)
        y: Labels ``[N]`` in ``[0, num_classes)``
        num_classes: Class count C
        ids: Example ids ``[N]``; subsets keep the ids of their source rows
    """
    x: np.ndarray
    y: np.ndarray
    num_classes: int
    ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ShapeError(f"expected features [N×d] and labels [N], got {x.shape} and {y.shape}")
        if len(y) < 1:
            raise ConfigError("a dataset needs at least one example")
        if not np.all(np.isfinite(x)):
            raise DataFormatError("features must be finite")
        if not np.issubdtype(y.dtype, np.integer):
            raise DataFormatError("labels must be integers")
        if self.num_classes < 2 or y.min() < 0 or y.max() >= self.num_classes:
            raise DataFormatError(f"labels must lie in [0, {self.num_classes})")
        ids = np.arange(len(y)) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != y.shape:
            raise ShapeError("ids must have one entry per example")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y.astype(np.int64))
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return int(self.y.shape[0])

    @property
    def dim(self) -> int:
        return int(self.x.shape[1])

    def take(self, index) -> "Dataset":
        """Rows ``index`` as a new dataset (ids preserved)."""
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.x[index], self.y[index], self.num_classes, self.ids[index])

    def with_labels(self, y) -> "Dataset":
        return Dataset(self.x, y, self.num_classes, self.ids)

    def with_features(self, x) -> "Dataset":
        return Dataset(x, self.y, self.num_classes, self.ids)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.num_classes)


# --- Synthetic data ---------------------------------------------------------


@dataclass(frozen=True)
class BlobsSpec:
    """
    Gaussian-blob generator settings.

    Args:
        num_classes: Cluster (class) count C
        per_class: Examples per class
        dim: Feature dimension d
        spread: Centres are uniform in ``[-spread, spread]^d``
        sigma: Isotropic cluster standard deviation
    """
    num_classes: int = 4
    per_class: int = 250
    dim: int = 2
    spread: float = 2.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        for name in ("per_class", "dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("spread", "sigma"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")

    def generate(self, seed: int) -> Dataset:
        return gen_blobs(self.num_classes, self.per_class, self.dim, self.spread, self.sigma, seed)

    def to_dict(self) -> Dict[str, Any]:
        return {"num_classes": self.num_classes, "per_class": self.per_class, "dim": self.dim,
                "spread": self.spread, "sigma": self.sigma}


def gen_blobs(num_classes: int, per_class: int, dim: int, spread: float, sigma: float,
              seed: int) -> Dataset:
    """
    C Gaussian clusters with exactly ``per_class`` examples each, rows in random order.

    Centres come from the ``blobs/centers`` stream, offsets from ``blobs/points`` and the
    row order from ``blobs/order``.
    """
    BlobsSpec(num_classes, per_class, dim, spread, sigma)
    rng = RngStream(seed).child("blobs")
    centers = rng.child("centers").uniform((num_classes, dim), -spread, spread)
    y = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    x = centers[y] + sigma * rng.child("points").normal((len(y), dim))
    order = rng.child("order").permutation(len(y))
    logger.debug("generated %d blobs examples (C=%d, d=%d)", len(y), num_classes, dim)
    return Dataset(x[order], y[order], num_classes)


def inject_label_noise(ds: Dataset, rate: float, seed: int) -> Dataset:
    """
    Replace each label with probability ``rate`` by one of the other C−1 classes, uniformly.

    Raises:
        ConfigError: If ``rate`` is outside ``[0, 1]``
    """
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"label noise rate must lie in [0, 1], got {rate}")
    if rate == 0.0:
        return ds
    rng = RngStream(seed).child("label-noise")
    flip = rng.uniform(len(ds)) < rate
    offset = rng.integers(1, ds.num_classes, len(ds))
    noisy = np.where(flip, (ds.y + offset) % ds.num_classes, ds.y)
    logger.info("label noise: flipped %d of %d labels", int(flip.sum()), len(ds))
    return ds.with_labels(noisy)


# --- CSV --------------------------------------------------------------------


def save_csv(path: Union[str, Path], ds: Dataset) -> Path:
    """Write ``f0,...,f{d-1},label`` rows with round-trip float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([f"f{k}" for k in range(ds.dim)] + ["label"])
        for row, label in zip(ds.x, ds.y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
    return path


def load_csv(path: Union[str, Path], num_classes: int = 0) -> Dataset:
    """
    Read a dataset CSV with header ``f0,...,f{d-1},label``.

    Args:
        path: CSV file
        num_classes: Class count; 0 infers ``max(label) + 1``

    Raises:
        FileNotFoundError: If the file does not exist
        DataFormatError: On a bad header, malformed row, non-integer label or
            inconsistent width
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = rows[0]
    expected = [f"f{k}" for k in range(len(header) - 1)] + ["label"]
    if len(header) < 2 or header != expected:
        raise DataFormatError(f"{path}: expected header f0,...,f{{d-1}},label, got {','.join(header)}")
    width = len(header)
    features, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise DataFormatError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            features.append([float(v) for v in row[:-1]])
        except ValueError as e:
            raise DataFormatError(f"{path}:{lineno}: {e}") from e
        try:
            labels.append(int(row[-1]))
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: label {row[-1]!r} is not an integer") from None
    if not labels:
        raise DataFormatError(f"{path}: no data rows")
    y = np.array(labels, dtype=np.int64)
    C = num_classes or int(y.max()) + 1
    logger.info("loaded %d examples with %d features from %s", len(y), width - 1, path)
    return Dataset(np.array(features, dtype=np.float64), y, max(C, 2))


# --- Splits -----------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    """
    Train / holdout / test fractions and the split seed.

    Sizes are ``floor(N·f)`` for train and holdout; the remainder goes to test.
    """
    train: float = 0.8
    holdout: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fractions = (self.train, self.holdout, self.test)
        if any(not f > 0 for f in fractions):
            raise ConfigError(f"split fractions must be positive, got {fractions}")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)}")

    @classmethod
    def from_sizes(cls, train: int, holdout: int, test: int, seed: int = 0) -> "SplitSpec":
        """Fractions that reproduce the given sizes on ``train + holdout + test`` rows."""
        n = train + holdout + test
        return cls(train / n, holdout / n, test / n, seed)

    def sizes(self, n: int) -> Tuple[int, int, int]:
        n_train = math.floor(n * self.train + _SIZE_EPS)
        n_holdout = math.floor(n * self.holdout + _SIZE_EPS)
        return n_train, n_holdout, n - n_train - n_holdout

    def to_dict(self) -> Dict[str, Any]:
        return {"train": self.train, "holdout": self.holdout, "test": self.test, "seed": self.seed}


def split(ds: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset, Dataset]:
    """Partition ``ds`` by a seeded permutation into ``(train, holdout, test)``."""
    n_train, n_holdout, _ = spec.sizes(len(ds))
    perm = RngStream(spec.seed).child("split").permutation(len(ds))
    return (
        ds.take(perm[:n_train]),
        ds.take(perm[n_train:n_train + n_holdout]),
        ds.take(perm[n_train + n_holdout:]),
    )


def carve(ds: Dataset, fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """
    Split off ``floor(N·fraction)`` rows, e.g. a calibration set taken out of training data.

    Returns:
        ``(rest, carved)``
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"carve fraction must lie in (0, 1), got {fraction}")
    k = math.floor(len(ds) * fraction + _SIZE_EPS)
    if k < 1 or k >= len(ds):
        raise ConfigError(f"carving {fraction} of {len(ds)} rows leaves an empty side")
    perm = RngStream(seed).child("carve").permutation(len(ds))
    return ds.take(np.sort(perm[k:])), ds.take(np.sort(perm[:k]))


def batches(n: Union[int, Dataset], batch_size: int, seed: int, epoch: int) -> Iterator[np.ndarray]:
    """
    Yield index arrays covering ``range(n)`` once, shuffled by the ``(seed, epoch)`` stream.

    The last batch may be smaller than ``batch_size``.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    n = len(n) if isinstance(n, Dataset) else int(n)
    perm = RngStream(seed).child("batches", epoch).permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


# --- Standardisation --------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    """Per-feature z-scoring with statistics from one (training) split."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, ds: Dataset) -> "Standardizer":
        std = ds.x.std(axis=0)
        return cls(ds.x.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, ds: Dataset) -> Dataset:
        if ds.dim != len(self.mean):
            raise ShapeError(f"standardizer fitted on {len(self.mean)} features, got {ds.dim}")
        return ds.with_features((ds.x - self.mean) / self.std)

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": [float(v).hex() for v in self.mean], "std": [float(v).hex() for v in self.std]}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Standardizer":
        try:
            return cls(np.array([float.fromhex(v) for v in d["mean"]]),
                       np.array([float.fromhex(v) for v in d["std"]]))
        except (KeyError, TypeError, ValueError) as e:
            raise DataFormatError(f"malformed standardizer: {e}") from e


__all__ = [
    "Dataset",
    "BlobsSpec",
    "SplitSpec",
    "Standardizer",
    "gen_blobs",
    "inject_label_noise",
    "save_csv",
    "load_csv",
    "split",
    "carve",
    "batches",
]
