"""
Run Presets
===========

Predefined experiment setups so a run needs only a loss choice and a seed.

Supported presets:
- smoke (seconds; wiring checks and tests)
- desk (default; the directional calibration setup on noisy 4-class blobs)
- full (the full milestone schedule with stochastic-depth blocks)

CLI flags override any preset field.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from .data import BlobsSpec
from .errors import ConfigError


@dataclass(frozen=True)
class RunPreset:
    """Dataset, architecture and schedule for one named setup"""
    name: str
    description: str
    blobs: BlobsSpec = field(default_factory=BlobsSpec)
    label_noise: float = 0.0
    split_sizes: Tuple[int, int, int] = (800, 100, 100)  # train / holdout / test
    hidden: Tuple[int, ...] = (64, 64)
    keep_prob: float = 0.5
    residual_blocks: int = 0
    survival_prob: float = 0.8
    samples: int = 5
    weight_decay: float = 5e-4
    epochs: int = 100
    milestones: Tuple[int, ...] = (30, 60, 80)
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    decay: float = 0.2

    def __post_init__(self):
        total = self.blobs.num_classes * self.blobs.per_class
        if sum(self.split_sizes) != total:
            raise ConfigError(
                f"preset {self.name}: split sizes {self.split_sizes} do not add up to {total} rows"
            )


SMOKE = RunPreset(
    name="smoke",
    description="Tiny 3-class blobs, 3 epochs - runs in seconds",
    blobs=BlobsSpec(num_classes=3, per_class=60, dim=2, spread=3.0, sigma=0.7),
    label_noise=0.1,
    split_sizes=(120, 30, 30),
    hidden=(16,),
    keep_prob=0.8,
    samples=3,
    epochs=3,
    milestones=(2,),
    batch_size=32,
)

# 4 000 train / 1 000 holdout / 2 000 test, 20% of labels flipped
DESK = RunPreset(
    name="desk",
    description="4-class blobs with 20% label noise, MLP 2-64-64-4, keep 0.5, T=5, 100 epochs",
    blobs=BlobsSpec(num_classes=4, per_class=1750, dim=2, spread=2.0, sigma=1.0),
    label_noise=0.2,
    split_sizes=(4000, 1000, 2000),
)

FULL = RunPreset(
    name="full",
    description="Desk data with two stochastic-depth blocks and the 300-epoch schedule",
    blobs=DESK.blobs,
    label_noise=0.2,
    split_sizes=DESK.split_sizes,
    residual_blocks=2,
    epochs=300,
    milestones=(60, 120, 160, 200, 250),
)

# Desk first as the recommended default
PRESETS: Dict[str, RunPreset] = {
    "desk": DESK,
    "smoke": SMOKE,
    "full": FULL,
}


def get_preset(name: str) -> RunPreset:
    """
    Get a run preset by name.

    Args:
        name: Preset name ('desk', 'smoke' or 'full')

    Returns:
        RunPreset

    Raises:
        ConfigError: If the preset name is not recognized

    Example:
        >>> from calibforge.presets import get_preset
        >>> get_preset('desk').split_sizes
        (4000, 1000, 2000)
    """
    name_lower = name.lower()
    if name_lower not in PRESETS:
        available = ", ".join(PRESETS.keys())
        raise ConfigError(f"Unknown preset '{name}'. Available presets: {available}")
    return PRESETS[name_lower]


def list_presets() -> Dict[str, str]:
    """Map preset names to descriptions."""
    return {name: preset.description for name, preset in PRESETS.items()}


def print_preset_info(name: Optional[str] = None) -> None:
    """
    Print detailed information about a preset or all presets.

    Example:
        >>> from calibforge.presets import print_preset_info
        >>> print_preset_info('smoke')
        >>> print_preset_info()  # Print all
    """
    if name:
        _print_single_preset(name, get_preset(name))
    else:
        print("Available calibforge Run Presets")
        print("=" * 70)
        for preset_name, preset in PRESETS.items():
            _print_single_preset(preset_name, preset)
            print()


def _print_single_preset(name: str, preset: RunPreset) -> None:
    b = preset.blobs
    arch = "-".join(str(w) for w in (b.dim, *preset.hidden, b.num_classes))
    print(f"\n{name.upper()}: {preset.description}")
    print("-" * 70)
    print(f"  Data:         blobs C={b.num_classes} d={b.dim} spread={b.spread} sigma={b.sigma}")
    print(f"  Label noise:  {preset.label_noise:.0%}")
    print(f"  Split:        {preset.split_sizes[0]} train / {preset.split_sizes[1]} holdout"
          f" / {preset.split_sizes[2]} test")
    print(f"  Model:        MLP {arch}, keep {preset.keep_prob}")
    if preset.residual_blocks:
        print(f"  Blocks:       {preset.residual_blocks} residual, survival {preset.survival_prob}")
    print(f"  Samples (T):  {preset.samples}")
    print(f"  Schedule:     {preset.epochs} epochs, lr {preset.lr} x{preset.decay} at "
          f"{', '.join(str(m) for m in preset.milestones)}")
    print(f"  Optimiser:    SGD momentum {preset.momentum}, batch {preset.batch_size},"
          f" weight decay {preset.weight_decay}")


__all__ = [
    "RunPreset",
    "SMOKE",
    "DESK",
    "FULL",
    "PRESETS",
    "get_preset",
    "list_presets",
    "print_preset_info",
]
