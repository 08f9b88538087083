"""Exception hierarchy shared by every calibforge module."""

from typing import Optional


class CalibForgeError(Exception):
    """Base exception for calibforge errors."""
    pass


class ConfigError(CalibForgeError, ValueError):
    """Raised when a configuration value or flag is outside its domain."""
    pass


class ShapeError(CalibForgeError, ValueError):
    """Raised when tensor or mask shapes disagree."""
    pass


class DataFormatError(CalibForgeError, ValueError):
    """Raised for malformed CSV files, checkpoints and report documents."""
    pass


class NumericError(CalibForgeError, ArithmeticError):
    """Raised when a computation produces or consumes NaN/Inf."""
    pass


class DivergenceError(NumericError):
    """
    Raised when the training loss becomes non-finite.

    Attributes:
        epoch: Epoch in which the loss diverged
        batch: Batch index within that epoch
        loss: The offending loss value
    """

    def __init__(self, epoch: int, batch: int, loss: float, detail: Optional[str] = None):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        msg = f"training diverged at epoch {epoch}, batch {batch}: loss={loss!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


__all__ = [
    "CalibForgeError",
    "ConfigError",
    "ShapeError",
    "DataFormatError",
    "NumericError",
    "DivergenceError",
]
