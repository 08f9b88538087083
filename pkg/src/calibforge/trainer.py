"""
Training Loop
=============

Heavy-ball SGD, the milestone learning-rate schedule and the training loop shared by every
loss family.

Each example draws its training masks from the stream
``(seed, "train-mask", epoch, id)``. Baseline, CI and entropy-CI run one stochastic
pass per example; VWCI runs T passes per example (row ``i·T + j``), measures α from
those passes and evaluates the loss on the same passes.

Example:
    >>> from calibforge.trainer import TrainConfig, train
    >>> params, log = train(spec, train_set, TrainConfig(epochs=10))
    >>> log.entries[-1].lr
    0.1
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .data import Dataset, batches
from .errors import ConfigError, DivergenceError, NumericError, ShapeError
from .loss import LossConfig, Objective, training_objective
from .model import (
    ModelSpec,
    NoiseMask,
    ParameterSet,
    concat_masks,
    forward_deterministic,
    forward_stochastic,
    init_params,
    sample_mask,
    save_checkpoint,
)
from .rng import RngStream
from .stochastic import StochasticConfig, mc_predict
from .tensor import backward

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimiser, schedule and objective settings.

    Args:
        epochs: Number of passes over the training set
        batch_size: Examples per step (default: 64)
        lr: Initial learning rate (default: 0.1)
        momentum: Heavy-ball momentum in [0, 1) (default: 0.9)
        decay: Factor applied at every milestone (default: 0.2)
        milestones: Strictly increasing epochs at which the rate decays
        loss: Objective; its ``weight_decay`` is the L2 coefficient λ
        stochastic: Monte-Carlo settings used when evaluating the trained model
        seed: Seed for initialisation, batch order and training masks
        checkpoint_every: Write a checkpoint every k epochs (0 disables)
    """
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    decay: float = 0.2
    milestones: Tuple[int, ...] = (30, 60, 80)
    loss: LossConfig = field(default_factory=LossConfig)
    stochastic: StochasticConfig = field(default_factory=StochasticConfig)
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not self.decay > 0:
            raise ConfigError(f"decay must be > 0, got {self.decay}")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ConfigError(f"milestones must be strictly increasing, got {self.milestones}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")

    @property
    def weight_decay(self) -> float:
        return self.loss.weight_decay

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "momentum": self.momentum,
            "decay": self.decay,
            "milestones": list(self.milestones),
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
        }


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """``lr₀ · decay^k`` where k counts the milestones ``<= epoch``."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    passed = sum(1 for m in cfg.milestones if m <= epoch)
    return cfg.lr * cfg.decay ** passed


# --- Optimiser --------------------------------------------------------------


def sgd_step(theta: np.ndarray, grad: np.ndarray, velocity: np.ndarray, lr: float,
             momentum: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    One heavy-ball step: ``v ← m·v + g``, ``θ ← θ − lr·v``.

    Returns:
        ``(theta, velocity)`` as new arrays

    Raises:
        ShapeError: If the shapes disagree
        NumericError: If the gradient is not finite
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    if not theta.shape == grad.shape == velocity.shape:
        raise ShapeError(f"sgd_step shapes disagree: {theta.shape}, {grad.shape}, {velocity.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    velocity = momentum * velocity + grad
    return theta - lr * velocity, velocity


class SGD:
    """
    Heavy-ball SGD over a :class:`ParameterSet`, with one velocity buffer per tensor.

    Args:
        params: Parameters updated in place by :meth:`step`
        momentum: Momentum coefficient m
    """

    def __init__(self, params: ParameterSet, momentum: float = 0.9):
        self.params = params
        self.momentum = momentum
        self.velocity: Dict[str, np.ndarray] = {name: np.zeros(t.shape) for name, t in params}

    def step(self, lr: float) -> None:
        grads = self.params.grads()
        updated = {}
        for name, t in self.params:
            try:
                updated[name], self.velocity[name] = sgd_step(
                    t.data, grads[name], self.velocity[name], lr, self.momentum
                )
            except NumericError as e:
                raise NumericError(f"{name}: {e}") from None
        self.params.assign(updated)


# --- Log --------------------------------------------------------------------


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    acc: float
    lr: float
    seconds: float


@dataclass
class TrainLog:
    """One :class:`EpochRecord` per completed epoch."""
    entries: List[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.entries.append(record)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def losses(self) -> List[float]:
        return [e.loss for e in self.entries]

    def write_csv(self, path: Union[str, Path]) -> Path:
        """Write ``epoch,loss,acc,lr,seconds`` rows."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["epoch", "loss", "acc", "lr", "seconds"])
            for e in self.entries:
                writer.writerow([e.epoch, repr(e.loss), repr(e.acc), repr(e.lr), f"{e.seconds:.6f}"])
        return path


# --- Steps ------------------------------------------------------------------


@dataclass
class BatchResult:
    objective: Objective
    correct: int
    rows: int


def training_mask(spec: ModelSpec, ids: np.ndarray, passes: int, seed: int,
                  epoch: int) -> NoiseMask:
    """
    Masks for one batch: row ``i*passes + j`` is pass ``j`` of example ``ids[i]``.

    Example ``i`` draws its passes from the stream ``(seed, "train-mask", epoch, ids[i])``,
    so its masks do not depend on which batch it lands in or where.
    """
    root = RngStream(seed)
    return concat_masks([
        sample_mask(spec, root.child("train-mask", epoch, int(i)), rows=passes) for i in ids
    ])


def batch_objective(params: ParameterSet, x: np.ndarray, y: np.ndarray, ids: np.ndarray,
                    cfg: TrainConfig, epoch: int) -> BatchResult:
    """
    Forward the batch under its training masks and evaluate the objective.

    Calling this twice with the same arguments gives the same loss, which is what the
    training log records for that step.
    """
    passes = cfg.loss.passes
    rows = len(y) * passes
    mask = training_mask(params.spec, ids, passes, cfg.seed, epoch)
    xs = np.repeat(x, passes, axis=0) if passes > 1 else x
    probs = forward_stochastic(xs, params, mask)
    objective = training_objective(cfg.loss, probs, y, params)
    correct = int(np.count_nonzero(probs.data.argmax(axis=1) == np.repeat(y, passes)))
    return BatchResult(objective, correct, rows)


def train_step(params: ParameterSet, optimizer: SGD, x: np.ndarray, y: np.ndarray,
               ids: np.ndarray, cfg: TrainConfig, epoch: int, batch: int) -> BatchResult:
    """Evaluate, backpropagate and apply one optimiser step at ``lr_at_epoch(epoch)``."""
    try:
        result = batch_objective(params, x, y, ids, cfg, epoch)
        loss = result.objective.loss
        params.zero_grad()
        backward(loss)
        optimizer.step(lr_at_epoch(cfg, epoch))
    except NumericError as e:
        if isinstance(e, DivergenceError):
            raise
        raise DivergenceError(epoch, batch, float("nan"), str(e)) from e
    if not math.isfinite(loss.item()):
        raise DivergenceError(epoch, batch, loss.item())
    return result


def train(spec: ModelSpec, train_set: Dataset, cfg: TrainConfig,
          params: Optional[ParameterSet] = None,
          checkpoint_dir: Optional[Union[str, Path]] = None) -> Tuple[ParameterSet, TrainLog]:
    """
    Train a model on ``train_set``.

    Args:
        spec: Architecture
        train_set: Training split
        cfg: Optimiser, schedule and objective
        params: Starting parameters (default: fresh ``init_params`` under ``cfg.seed``)
        checkpoint_dir: Where periodic checkpoints go when ``cfg.checkpoint_every > 0``

    Returns:
        ``(params, log)``

    Raises:
        ShapeError: If the data does not match ``spec``
        DivergenceError: If the loss or a gradient becomes non-finite
    """
    if train_set.dim != spec.input_dim or train_set.num_classes != spec.num_classes:
        raise ShapeError(
            f"dataset has {train_set.dim} features and {train_set.num_classes} classes; "
            f"model expects {spec.input_dim} and {spec.num_classes}"
        )
    if params is None:
        params = init_params(spec, RngStream(cfg.seed))
    optimizer = SGD(params, cfg.momentum)
    log = TrainLog()
    logger.info("training %s on %d examples: loss=%s epochs=%d",
                params, len(train_set), cfg.loss.kind.value, cfg.epochs)

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        loss_sum = 0.0
        correct = rows = 0
        for b, index in enumerate(batches(len(train_set), cfg.batch_size, cfg.seed, epoch)):
            result = train_step(params, optimizer, train_set.x[index], train_set.y[index],
                                train_set.ids[index], cfg, epoch, b)
            loss_sum += result.objective.loss.item() * len(index)
            correct += result.correct
            rows += result.rows
            logger.debug("epoch %d batch %d loss %.6f", epoch, b, result.objective.loss.item())
        record = EpochRecord(
            epoch=epoch,
            loss=loss_sum / len(train_set),
            acc=correct / rows,
            lr=lr_at_epoch(cfg, epoch),
            seconds=time.perf_counter() - started,
        )
        log.append(record)
        logger.info("epoch %3d  loss %.4f  acc %.4f  lr %.5f  %.2fs",
                    record.epoch, record.loss, record.acc, record.lr, record.seconds)
        if checkpoint_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"model-epoch{epoch + 1:04d}.json", params,
                            epoch=epoch + 1)
    return params, log


def predict_probs(params: ParameterSet, x: np.ndarray, stochastic: Optional[StochasticConfig] = None,
                  ids: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Class probabilities for evaluation: the deterministic pass, or the Monte-Carlo mean
    when ``stochastic`` is given.
    """
    if stochastic is None:
        return forward_deterministic(np.asarray(x, dtype=np.float64), params).data
    return mc_predict(x, params, stochastic, example_ids=ids).mean()


__all__ = [
    "TrainConfig",
    "TrainLog",
    "EpochRecord",
    "BatchResult",
    "SGD",
    "lr_at_epoch",
    "sgd_step",
    "training_mask",
    "batch_objective",
    "train_step",
    "train",
    "predict_probs",
]
