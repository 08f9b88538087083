"""Variance-weighted confidence calibration for small stochastic classifiers."""

from .calib import (
    CalibrationAccumulator,
    CalibrationBin,
    CalibrationReport,
    PredictionRecord,
    Temperature,
    apply_temperature,
    bin_predictions,
    brier,
    coverage_curve,
    ece,
    evaluate_records,
    fit_temperature,
    mce,
    nll,
    records_from_probs,
    variance_histogram,
    variance_reliability_correlation,
)
from .config import RunConfig, load_splits
from .data import (
    BlobsSpec,
    Dataset,
    SplitSpec,
    Standardizer,
    batches,
    gen_blobs,
    inject_label_noise,
    load_csv,
    save_csv,
    split,
)
from .errors import (
    CalibForgeError,
    ConfigError,
    DataFormatError,
    DivergenceError,
    NumericError,
    ShapeError,
)
from .loss import (
    LossConfig,
    LossKind,
    MixturePriorSpec,
    approx_kl_mixture,
    ci_loss,
    cross_entropy,
    entropy_ci_loss,
    l2_penalty,
    vwci_loss,
)
from .model import (
    ModelSpec,
    NoiseMask,
    ParameterSet,
    forward_deterministic,
    forward_stochastic,
    init_params,
    load_checkpoint,
    sample_mask,
    save_checkpoint,
)
from .presets import RunPreset, get_preset, list_presets, print_preset_info
from .rng import RngStream
from .stochastic import (
    StochasticConfig,
    StochasticPredictionSet,
    mc_predict,
    normalized_variance,
    predictive_covariance,
    predictive_mean,
)
from .tensor import Tape, Tensor, backward
from .trainer import SGD, TrainConfig, TrainLog, lr_at_epoch, predict_probs, sgd_step, train

__version__ = "1.0.0"
__all__ = [
    "CalibForgeError",
    "ConfigError",
    "ShapeError",
    "NumericError",
    "DivergenceError",
    "DataFormatError",
    "Tensor",
    "Tape",
    "backward",
    "RngStream",
    "ModelSpec",
    "ParameterSet",
    "NoiseMask",
    "init_params",
    "sample_mask",
    "forward_stochastic",
    "forward_deterministic",
    "save_checkpoint",
    "load_checkpoint",
    "StochasticConfig",
    "StochasticPredictionSet",
    "mc_predict",
    "predictive_mean",
    "predictive_covariance",
    "normalized_variance",
    "LossKind",
    "LossConfig",
    "cross_entropy",
    "ci_loss",
    "vwci_loss",
    "entropy_ci_loss",
    "l2_penalty",
    "MixturePriorSpec",
    "approx_kl_mixture",
    "PredictionRecord",
    "CalibrationBin",
    "CalibrationAccumulator",
    "CalibrationReport",
    "Temperature",
    "records_from_probs",
    "bin_predictions",
    "ece",
    "mce",
    "nll",
    "brier",
    "coverage_curve",
    "variance_histogram",
    "variance_reliability_correlation",
    "evaluate_records",
    "apply_temperature",
    "fit_temperature",
    "Dataset",
    "BlobsSpec",
    "SplitSpec",
    "Standardizer",
    "gen_blobs",
    "inject_label_noise",
    "load_csv",
    "save_csv",
    "split",
    "batches",
    "TrainConfig",
    "TrainLog",
    "SGD",
    "lr_at_epoch",
    "sgd_step",
    "predict_probs",
    "train",
    "RunConfig",
    "load_splits",
    "RunPreset",
    "get_preset",
    "list_presets",
    "print_preset_info",
    "from_preset",
]


# Convenience function for creating a run from a preset
def from_preset(preset_name: str, loss: str = "baseline", seed: int = 0, **kwargs) -> RunConfig:
    """
    Create a fully resolved RunConfig from a run preset.

    Args:
        preset_name: Name of preset ('desk', 'smoke', 'full')
        loss: Loss kind ('baseline', 'ci', 'vwci', 'entropy-ci')
        seed: Training and inference seed (data uses the same seed unless data_seed is given)
        **kwargs: LossConfig fields (beta, gamma, samples, ...) or RunConfig/TrainConfig
            overrides (epochs, out_dir, data_seed, ...)

    Returns:
        RunConfig

    Example:
        >>> from calibforge import from_preset, load_splits, train
        >>>
        >>> run = from_preset('smoke', loss='vwci', seed=3)
        >>> splits = load_splits(run)
        >>> params, log = train(run.model, splits.train, run.train)
    """
    preset = get_preset(preset_name)
    loss_fields = {k: kwargs.pop(k) for k in list(kwargs) if k in LossConfig.__dataclass_fields__}
    loss_fields.setdefault("samples", preset.samples)
    loss_fields.setdefault("weight_decay", preset.weight_decay)
    return RunConfig.from_preset(preset, loss=LossConfig(kind=loss, **loss_fields), seed=seed, **kwargs)
