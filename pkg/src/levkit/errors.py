"""Exception types raised across levkit."""


class LevkitError(Exception):
    """Base class for all levkit errors."""


class ValidationError(LevkitError, ValueError):
    """Input violates a documented precondition."""


class NumericalError(LevkitError, ArithmeticError):
    """A computation failed for numerical reasons."""


class EdgeSingularity(NumericalError):
    """Field evaluated too close to a magnet edge where the closed form degenerates."""


class QuadratureDivergence(NumericalError):
    """A quadrature node hit a field singularity."""


class NoMinimumInBox(NumericalError):
    """The coarse energy scan found its minimum on the search-box boundary."""


class BlowUp(NumericalError):
    """A simulated trajectory exceeded the blow-up bound."""

    def __init__(self, message, outcome=None):
        super().__init__(message)
        self.outcome = outcome


class InsufficientPeaks(NumericalError):
    """Too few extrema to fit a ringdown envelope."""


class NoPeak(NumericalError):
    """The small-delay peak formula has no real solution."""


class NoConvergence(NumericalError):
    """An iterative fit exhausted its iteration budget."""


class InvalidBand(ValidationError):
    """Filter or analysis band outside (0, Nyquist) or inverted."""


class BadBand(ValidationError):
    """Analysis band unsuitable for fitting (too few bins, misses resonance)."""


class RateMismatch(ValidationError):
    """Sample rates of two objects that must agree do not."""


class TooShort(ValidationError):
    """Time series shorter than the requested segment length."""


class ConstraintViolation(ValidationError):
    """Fit constraints are inconsistent or an estimate left its bounds."""
