"""
Training Objectives
===================

All objectives operate on probability tensors produced by the model and are
differentiable through the tape:

- ``baseline``    cross-entropy under stochastic regularisation
- ``ci``          cross-entropy + β · KL(U‖p)
- ``vwci``        per-example mix (1−α)·CE + α·KL(U‖p) over T stochastic passes
- ``entropy-ci``  cross-entropy − γ · H(p)

plus the L2 penalty on weights and :func:`approx_kl_mixture`, a closed-form diagnostic for
the KL between a two-component Gaussian mixture posterior and a standard normal prior.

The additive constants that appear when KL terms are rewritten as cross-entropies
(``ξ = log C``) never enter the optimised value; :meth:`LossConfig.xi` reports them.
Every log clamps its argument at ``1e-12``.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, ShapeError
from .model import ParameterSet
from .stochastic import ALPHA_MODES, normalized_variance
from .tensor import (
    Tensor,
    add,
    detach,
    gather_rows,
    log,
    matmul,
    mean,
    mul,
    reshape,
    scale,
    shift,
    sqrt,
    sub,
)
from .tensor import sum as tsum

KL_ORIENTATIONS = ("uniform-to-pred", "pred-to-uniform")


class LossKind(str, Enum):
    BASELINE = "baseline"
    CI = "ci"
    VWCI = "vwci"
    ENTROPY_CI = "entropy-ci"


@dataclass(frozen=True)
class LossConfig:
    """
    Loss family and coefficients.

    Args:
        kind: baseline, ci, vwci or entropy-ci
        beta: CI coefficient β >= 0
        gamma: Entropy coefficient γ >= 0
        weight_decay: L2 coefficient λ >= 0 on weights (biases excluded)
        samples: Stochastic passes T per example for vwci
        alpha_mode: "one-minus-bc" or "bc"
        detach_alpha: Treat α as a constant coefficient (no gradient through it)
        grad_all_samples: Backpropagate through all T passes (False: only the first)
        alpha_override: Use this α for every example instead of measuring it
        kl_orientation: KL direction used by ci ("uniform-to-pred" is KL(U‖p))
    """
    kind: LossKind = LossKind.BASELINE
    beta: float = 0.0
    gamma: float = 0.0
    weight_decay: float = 0.0
    samples: int = 5
    alpha_mode: str = "one-minus-bc"
    detach_alpha: bool = True
    grad_all_samples: bool = True
    alpha_override: Optional[float] = None
    kl_orientation: str = "uniform-to-pred"

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", LossKind(self.kind))
        except ValueError:
            kinds = ", ".join(k.value for k in LossKind)
            raise ConfigError(f"unknown loss kind {self.kind!r}; choose one of {kinds}") from None
        for name in ("beta", "gamma", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.kind is LossKind.VWCI and self.samples < 1:
            raise ConfigError(f"vwci needs samples (T) >= 1, got {self.samples}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ConfigError(f"unknown alpha mode {self.alpha_mode!r}")
        if self.alpha_override is not None and not 0.0 <= self.alpha_override <= 1.0:
            raise ConfigError(f"alpha_override must lie in [0, 1], got {self.alpha_override}")
        if self.kl_orientation not in KL_ORIENTATIONS:
            raise ConfigError(f"unknown KL orientation {self.kl_orientation!r}")

    @property
    def passes(self) -> int:
        """Stochastic forward passes per example per step."""
        return self.samples if self.kind is LossKind.VWCI else 1

    @staticmethod
    def xi(num_classes: int) -> float:
        """The constant ``log C`` folded out of the optimised value."""
        return math.log(num_classes)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "beta": self.beta,
            "gamma": self.gamma,
            "weight_decay": self.weight_decay,
            "samples": self.samples,
            "alpha_mode": self.alpha_mode,
            "detach_alpha": self.detach_alpha,
            "grad_all_samples": self.grad_all_samples,
            "alpha_override": self.alpha_override,
            "kl_orientation": self.kl_orientation,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "LossConfig":
        return cls(**d)


@dataclass(frozen=True)
class UniformTarget:
    """The uniform distribution over C classes."""
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"uniform target needs C >= 2, got {self.num_classes}")

    @property
    def probs(self) -> np.ndarray:
        return np.full(self.num_classes, 1.0 / self.num_classes)

    @property
    def log_mass(self) -> float:
        """log(1/C), the log-probability of every class."""
        return -math.log(self.num_classes)


@dataclass(frozen=True)
class MixturePriorSpec:
    """
    Inputs to :func:`approx_kl_mixture`.

    Args:
        squared_norms: ``(θ₁ᵀθ₁, θ₂ᵀθ₂)``; θ₂ is conventionally the zero vector
        weights: Mixture weights ``(e₁, e₂)`` summing to 1
        sigma: Component variance scalar σ > 0
        dim: Parameter dimension D >= 1
    """
    squared_norms: Tuple[float, float]
    weights: Tuple[float, float] = (1.0, 0.0)
    sigma: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if len(self.weights) != 2 or len(self.squared_norms) != 2:
            raise ConfigError("mixture needs exactly two components")
        if any(not 0.0 <= e <= 1.0 for e in self.weights) or abs(sum(self.weights) - 1.0) > 1e-12:
            raise ConfigError(f"mixture weights must lie in [0, 1] and sum to 1, got {self.weights}")
        if any(v < 0 for v in self.squared_norms):
            raise ConfigError("squared norms must be >= 0")


# --- Per-row terms ----------------------------------------------------------


def _labels(probs: Tensor, labels: Sequence[int]) -> np.ndarray:
    if probs.ndim != 2:
        raise ShapeError(f"expected probabilities [n×C], got {probs.shape}")
    y = np.asarray(labels)
    if y.shape != (probs.shape[0],):
        raise ShapeError(f"expected {probs.shape[0]} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ConfigError("labels must be integers")
    if y.size and (y.min() < 0 or y.max() >= probs.shape[1]):
        raise ConfigError(f"labels must lie in [0, {probs.shape[1]})")
    return y.astype(np.int64)


def nll_rows(probs: Tensor, labels: Sequence[int]) -> Tensor:
    """``−log p(y_i)`` for every row."""
    return scale(log(gather_rows(probs, _labels(probs, labels))), -1.0)


def kl_uniform(probs: Tensor) -> Tensor:
    """
    ``KL(U‖p) = Σ_c (1/C)·log((1/C)/p_c)`` for every row.

    Example:
        >>> round(float(kl_uniform(Tensor([[0.9, 0.1]])).data[0]), 5)
        0.51083
    """
    target = UniformTarget(probs.shape[1])
    return shift(scale(tsum(log(probs), axis=1), -1.0 / target.num_classes), target.log_mass)


def kl_to_uniform(probs: Tensor) -> Tensor:
    """``KL(p‖U) = Σ_c p_c·log p_c + log C = −H(p) + log C`` for every row."""
    return shift(scale(entropy(probs), -1.0), math.log(probs.shape[1]))


def entropy(probs: Tensor) -> Tensor:
    """``H(p) = −Σ_c p_c·log p_c`` for every row."""
    return scale(tsum(mul(probs, log(probs)), axis=1), -1.0)


# --- Objectives -------------------------------------------------------------


def cross_entropy(probs: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of the labels."""
    return mean(nll_rows(probs, labels))


def ci_loss(probs: Tensor, labels: Sequence[int], beta: float,
            orientation: str = "uniform-to-pred") -> Tensor:
    """
    Confidence-integrated loss ``CE + β·mean KL``.

    Raises:
        ConfigError: If ``beta < 0`` or the orientation is unknown
    """
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    if orientation == "uniform-to-pred":
        kl = kl_uniform(probs)
    elif orientation == "pred-to-uniform":
        kl = kl_to_uniform(probs)
    else:
        raise ConfigError(f"unknown KL orientation {orientation!r}")
    return add(cross_entropy(probs, labels), scale(mean(kl), beta))


def entropy_ci_loss(probs: Tensor, labels: Sequence[int], gamma: float) -> Tensor:
    """Entropy form of the confidence-integrated loss ``CE − γ·mean H(p)``."""
    return sub(cross_entropy(probs, labels), scale(mean(entropy(probs)), gamma))


def _expand(n: int, samples: int) -> np.ndarray:
    """``[n·T × n]`` 0/1 matrix copying example i to its T rows."""
    return np.repeat(np.eye(n), samples, axis=0)


def vwci_loss(probs: Tensor, labels: Sequence[int], alphas: Union[np.ndarray, Tensor],
              samples: int, grad_all_samples: bool = True) -> Tensor:
    """
    Variance-weighted confidence-integrated loss.

    ``probs`` holds the T stochastic predictions of each example in consecutive rows
    (row ``i·T + j`` is pass j of example i). The value is the mean over examples of
    ``(1/T) Σ_j (1−α_i)·(−log p_j(y_i)) + α_i·KL(U‖p_j)``.

    Args:
        probs: ``[n·T × C]`` probabilities
        labels: ``n`` labels
        alphas: ``n`` coefficients in [0, 1]; an ndarray is a constant, a Tensor is
            differentiated through
        samples: T
        grad_all_samples: When False, only pass ``j = 0`` carries gradient; the value is
            unchanged

    Raises:
        ConfigError: If any α lies outside [0, 1]
        ShapeError: If the row count is not ``n·T``
    """
    y = np.asarray(labels)
    n = y.shape[0]
    if samples < 1 or probs.ndim != 2 or probs.shape[0] != n * samples:
        raise ShapeError(f"expected {n}×{samples} probability rows, got {probs.shape}")

    if isinstance(alphas, Tensor):
        if alphas.shape != (n,):
            raise ShapeError(f"expected {n} alphas, got {alphas.shape}")
        a_rows = reshape(matmul(Tensor(_expand(n, samples)), reshape(alphas, (n, 1))), (n * samples,))
        w_gt = shift(scale(a_rows, -1.0), 1.0)
        w_u = a_rows
    else:
        a = np.asarray(alphas, dtype=np.float64)
        if a.shape != (n,):
            raise ShapeError(f"expected {n} alphas, got {a.shape}")
        if np.any(a < 0.0) or np.any(a > 1.0):
            raise ConfigError("alpha values must lie in [0, 1]")
        a_rows_np = np.repeat(a, samples)
        w_gt = Tensor(1.0 - a_rows_np)
        w_u = Tensor(a_rows_np)

    nll = nll_rows(probs, np.repeat(y, samples))
    terms = add(mul(w_gt, nll), mul(w_u, kl_uniform(probs)))

    if not grad_all_samples and samples > 1:
        live = np.zeros(n * samples)
        live[::samples] = 1.0
        terms = add(mul(terms, Tensor(live)), mul(detach(terms), Tensor(1.0 - live)))
    return mean(terms)


def alpha_tensor(probs: Tensor, n: int, samples: int, mode: str = "one-minus-bc") -> Tensor:
    """
    Normalised variance of each example as a differentiable tensor (no clipping).

    Uses the same row layout as :func:`vwci_loss`.
    """
    if mode not in ALPHA_MODES:
        raise ConfigError(f"unknown alpha mode {mode!r}")
    expand = _expand(n, samples)
    average = Tensor(expand.T / samples)
    mean_rows = matmul(Tensor(expand), matmul(average, probs))
    bc_rows = tsum(sqrt(mul(probs, mean_rows)), axis=1)
    mean_bc = reshape(matmul(average, reshape(bc_rows, (n * samples, 1))), (n,))
    return shift(scale(mean_bc, -1.0), 1.0) if mode == "one-minus-bc" else mean_bc


def l2_penalty(params: ParameterSet, lam: float) -> Tensor:
    """``λ · Σ w²`` over all weight matrices (biases excluded)."""
    if lam < 0:
        raise ConfigError(f"weight decay must be >= 0, got {lam}")
    total: Optional[Tensor] = None
    for w in params.weights():
        sq = tsum(mul(w, w))
        total = sq if total is None else add(total, sq)
    return scale(total, lam)


def approx_kl_mixture(spec: MixturePriorSpec) -> float:
    """
    Closed-form approximation of ``KL(q‖p)`` for ``q = Σ e_i N(θ_i, σ²I)``, ``p = N(0, I)``::

        Σ_i (e_i/2)·(θ_iᵀθ_i + Dσ − log σ − D(1 + log 2π)) − ½·H(e)

    with ``0·log 0 = 0``. A diagnostic only; never part of a training objective.
    """
    D = spec.dim
    total = 0.0
    for e, sq in zip(spec.weights, spec.squared_norms):
        total += 0.5 * e * (sq + D * spec.sigma - math.log(spec.sigma) - D * (1.0 + math.log(2 * math.pi)))
    entropy_e = -sum(e * math.log(e) for e in spec.weights if e > 0.0)
    return total - 0.5 * entropy_e


@dataclass
class Objective:
    """Value of one training objective evaluation."""
    loss: Tensor
    alphas: Optional[np.ndarray] = None


def training_objective(cfg: LossConfig, probs: Tensor, labels: Sequence[int],
                       params: ParameterSet) -> Objective:
    """
    Evaluate the configured objective plus the L2 penalty.

    For vwci, ``probs`` must hold ``cfg.samples`` consecutive rows per example; α is
    measured from those same rows (or taken from ``cfg.alpha_override``).
    """
    alphas: Optional[np.ndarray] = None
    if cfg.kind is LossKind.BASELINE:
        loss = cross_entropy(probs, labels)
    elif cfg.kind is LossKind.CI:
        loss = ci_loss(probs, labels, cfg.beta, cfg.kl_orientation)
    elif cfg.kind is LossKind.ENTROPY_CI:
        loss = entropy_ci_loss(probs, labels, cfg.gamma)
    else:
        n = len(labels)
        T = cfg.samples
        if cfg.alpha_override is not None:
            alphas = np.full(n, cfg.alpha_override)
            weights: Union[np.ndarray, Tensor] = alphas
        elif cfg.detach_alpha:
            alphas = normalized_variance(probs.data.reshape(n, T, -1), cfg.alpha_mode)
            weights = alphas
        else:
            weights = alpha_tensor(probs, n, T, cfg.alpha_mode)
            alphas = weights.data.copy()
        loss = vwci_loss(probs, labels, weights, T, cfg.grad_all_samples)

    if cfg.weight_decay > 0:
        loss = add(loss, l2_penalty(params, cfg.weight_decay))
    return Objective(loss=loss, alphas=alphas)


__all__ = [
    "KL_ORIENTATIONS",
    "LossKind",
    "LossConfig",
    "UniformTarget",
    "MixturePriorSpec",
    "Objective",
    "nll_rows",
    "kl_uniform",
    "kl_to_uniform",
    "entropy",
    "cross_entropy",
    "ci_loss",
    "entropy_ci_loss",
    "vwci_loss",
    "alpha_tensor",
    "l2_penalty",
    "approx_kl_mixture",
    "training_objective",
]
