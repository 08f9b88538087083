"""
Monte-Carlo Stochastic Inference
================================

Runs T stochastic forward passes per example and summarises them: predictive mean,
predictive covariance, Bhattacharyya coefficients and the normalised variance α.

Prediction sets are arrays of shape ``[..., T, C]``: one ``[T×C]`` block per example.
Every summary function accepts either a :class:`StochasticPredictionSet` or such an
array, and reduces over the sample axis (second to last).

Example:
    >>> import numpy as np
    >>> from calibforge.stochastic import normalized_variance
    >>> round(float(normalized_variance(np.array([[1.0, 0.0], [0.0, 1.0]]))), 5)
    0.29289
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, ShapeError
from .model import ParameterSet, concat_masks, forward_stochastic, sample_mask
from .rng import RngStream, derive_stream

logger = logging.getLogger(__name__)

ALPHA_MODES = ("one-minus-bc", "bc")


@dataclass(frozen=True)
class StochasticConfig:
    """
    Monte-Carlo inference settings.

    Args:
        samples: Number of stochastic passes T (default: 5)
        seed: Base seed for the per-example mask streams
        threads: Worker threads for mc_predict; results do not depend on it
    """
    samples: int = 5
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigError(f"samples (T) must be >= 1, got {self.samples}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")


@dataclass(frozen=True)
class StochasticPredictionSet:
    """
    T probability vectors per example.

    Attributes:
        probs: Array ``[n × T × C]``; every row is a distribution
    """
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim == 2:
            probs = probs[None]
        if probs.ndim != 3 or probs.shape[1] < 1:
            raise ShapeError(f"expected [n×T×C] probabilities, got {probs.shape}")
        if np.any(probs < 0.0) or np.any(np.abs(probs.sum(axis=-1) - 1.0) > 1e-9):
            raise ConfigError("every stochastic prediction must be a probability vector")
        object.__setattr__(self, "probs", probs)

    @property
    def n(self) -> int:
        return int(self.probs.shape[0])

    @property
    def samples(self) -> int:
        return int(self.probs.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.probs.shape[2])

    def example(self, i: int) -> np.ndarray:
        return self.probs[i]

    def mean(self) -> np.ndarray:
        return predictive_mean(self)

    def covariance(self) -> np.ndarray:
        return predictive_covariance(self)

    def alpha(self, mode: str = "one-minus-bc") -> np.ndarray:
        return normalized_variance(self, mode)


@dataclass(frozen=True)
class PredictiveSummary:
    """Predictive mean ``[n×C]``, covariance ``[n×C×C]`` and normalised variance ``[n]``."""
    mean: np.ndarray
    covariance: np.ndarray
    alpha: np.ndarray


PredictionsLike = Union[StochasticPredictionSet, np.ndarray, Sequence]


def _samples(s: PredictionsLike) -> np.ndarray:
    arr = s.probs if isinstance(s, StochasticPredictionSet) else np.asarray(s, dtype=np.float64)
    if arr.ndim < 2 or arr.shape[-2] < 1:
        raise ShapeError(f"expected [..., T, C] predictions, got {arr.shape}")
    return arr


def predictive_mean(s: PredictionsLike) -> np.ndarray:
    """Average of the T probability vectors of each example."""
    return _samples(s).mean(axis=-2)


def predictive_covariance(s: PredictionsLike) -> np.ndarray:
    """
    Plug-in covariance ``E[yyᵀ] − E[y]E[y]ᵀ`` of the T vectors (divides by T).

    Evaluated in the centred form ``mean_t (y_t − ȳ)(y_t − ȳ)ᵀ``, which is the same
    estimator without the cancellation of the raw second moment.
    """
    arr = _samples(s)
    centred = arr - arr.mean(axis=-2, keepdims=True)
    cov = np.einsum("...tc,...td->...cd", centred, centred) / arr.shape[-2]
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def bhattacharyya(p, q) -> np.ndarray:
    """
    Bhattacharyya coefficient ``Σ_c sqrt(p_c·q_c)`` over the last axis.

    Raises:
        ConfigError: If either argument has negative entries
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if np.any(p < 0.0) or np.any(q < 0.0):
        raise ConfigError("bhattacharyya is defined for nonnegative distributions only")
    return np.sqrt(p * q).sum(axis=-1)


def normalized_variance(s: PredictionsLike, mode: str = "one-minus-bc") -> np.ndarray:
    """
    Disagreement of the T predictions of each example, in [0, 1].

    ``one-minus-bc`` (default): ``α = 1 − mean_j BC(p_j, p̄)``, zero when all passes agree.
    ``bc``: ``α = mean_j BC(p_j, p̄)``.

    Raises:
        ConfigError: For an unknown mode
    """
    if mode not in ALPHA_MODES:
        raise ConfigError(f"unknown alpha mode {mode!r}; choose one of {', '.join(ALPHA_MODES)}")
    arr = _samples(s)
    mean_bc = bhattacharyya(arr, arr.mean(axis=-2, keepdims=True)).mean(axis=-1)
    alpha = 1.0 - mean_bc if mode == "one-minus-bc" else mean_bc
    return np.clip(alpha, 0.0, 1.0)


def summarize(s: PredictionsLike, mode: str = "one-minus-bc") -> PredictiveSummary:
    return PredictiveSummary(
        mean=predictive_mean(s),
        covariance=predictive_covariance(s),
        alpha=normalized_variance(s, mode),
    )


def _predict_chunk(x: np.ndarray, ids: np.ndarray, params: ParameterSet,
                   cfg: StochasticConfig) -> np.ndarray:
    spec = params.spec
    T = cfg.samples
    masks = [
        sample_mask(spec, RngStream(cfg.seed, derive_stream("mc", int(i))), rows=T) for i in ids
    ]
    stacked = np.repeat(x, T, axis=0)
    probs = forward_stochastic(stacked, params, concat_masks(masks)).data
    return probs.reshape(len(ids), T, spec.num_classes)


def mc_predict(x, params: ParameterSet, cfg: StochasticConfig,
               example_ids: Optional[Sequence[int]] = None,
               chunk_size: int = 256) -> StochasticPredictionSet:
    """
    T stochastic forward passes for every row of ``x``.

    Example ``i`` draws its T masks from the stream ``(cfg.seed, "mc", example_ids[i])``;
    sample ``j`` always uses the j-th mask block of that stream, so results are the same
    for any chunking or thread count.

    Args:
        x: Inputs ``[n×d]``
        params: Model parameters (read only)
        cfg: Sample count, seed and thread count
        example_ids: Stable ids keying the mask streams (default: row index)
        chunk_size: Examples per forward batch

    Returns:
        StochasticPredictionSet of shape ``[n×T×C]``
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ShapeError(f"expected a nonempty input [n×d], got {x.shape}")
    ids = np.arange(len(x)) if example_ids is None else np.asarray(example_ids, dtype=np.int64)
    if ids.shape != (len(x),):
        raise ShapeError("example_ids must have one id per input row")

    starts = range(0, len(x), chunk_size)
    work = [(x[s:s + chunk_size], ids[s:s + chunk_size]) for s in starts]
    if cfg.threads > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts: List[np.ndarray] = list(
                pool.map(lambda w: _predict_chunk(w[0], w[1], params, cfg), work)
            )
    else:
        parts = [_predict_chunk(xs, chunk_ids, params, cfg) for xs, chunk_ids in work]

    logger.debug("mc_predict: %d examples × %d samples", len(x), cfg.samples)
    return StochasticPredictionSet(np.concatenate(parts, axis=0))


__all__ = [
    "ALPHA_MODES",
    "StochasticConfig",
    "StochasticPredictionSet",
    "PredictiveSummary",
    "mc_predict",
    "predictive_mean",
    "predictive_covariance",
    "bhattacharyya",
    "normalized_variance",
    "summarize",
]
