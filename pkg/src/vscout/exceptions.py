"""Exception hierarchy shared by every VSCOUT module."""

from __future__ import annotations


class VscoutError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateInputError(VscoutError, ValueError):
    """Input is too small or too constant for the requested computation."""


class IllConditionedError(VscoutError, ArithmeticError):
    """A Cholesky factorization failed or met non-finite entries.

    Attributes:
        pivot: 1-based index of the leading minor that was not positive
            definite, or ``None`` when the failure came from non-finite input.
    """

    def __init__(self, message: str, pivot: int | None = None) -> None:
        super().__init__(message)
        self.pivot = pivot


class NumericalOverflowError(VscoutError, ArithmeticError):
    """A forward pass produced NaN or infinite values."""


class TrainingDivergedError(VscoutError, ArithmeticError):
    """The training loss became non-finite."""

    def __init__(self, message: str, epoch: int) -> None:
        super().__init__(message)
        self.epoch = epoch


class ConfigError(VscoutError, ValueError):
    """A configuration value is invalid for the data at hand."""


class CalibrationError(VscoutError, ValueError):
    """The requested false-alarm calibration has no valid solution."""


class PipelineError(VscoutError, RuntimeError):
    """The end-to-end pipeline cannot continue (e.g. every row was flagged)."""


class UndefinedMetricError(VscoutError, ValueError):
    """A metric is undefined for the supplied labels (e.g. one class only)."""
