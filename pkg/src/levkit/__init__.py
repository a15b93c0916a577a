"""Diamagnetic plate levitation, delayed-feedback cooling simulation and PSD analysis."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BadBand, BlowUp, ConstraintViolation, EdgeSingularity, InsufficientPeaks, InvalidBand,
    LevkitError, NoConvergence, NoMinimumInBox, NoPeak, NumericalError, QuadratureDivergence,
    RateMismatch, TooShort, ValidationError,
)

__all__ = [
    "__version__", "BadBand", "BlowUp", "ConstraintViolation", "EdgeSingularity",
    "InsufficientPeaks", "InvalidBand", "LevkitError", "NoConvergence", "NoMinimumInBox", "NoPeak",
    "NumericalError", "QuadratureDivergence", "RateMismatch", "TooShort", "ValidationError",
]
