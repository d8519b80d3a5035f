"""Exception types shared across the package."""


class PrssmError(Exception):
    """Base class for all library errors."""


class NotPositiveDefinite(PrssmError):
    """Matrix factorization failed even after jitter escalation."""


class DimensionMismatch(PrssmError):
    """Operands have incompatible shapes."""


class IndexOutOfRange(PrssmError):
    """A dimension index points outside the valid range."""


class NonFiniteState(PrssmError):
    """A latent rollout produced NaN or infinite values."""


class WindowTooShort(PrssmError):
    """Fewer time steps available than the required window length."""


class TrajectoryTooShort(PrssmError):
    """Trajectory shorter than the requested sub-trajectory or history."""


class ZeroVariance(PrssmError):
    """A data channel is constant; normalization is undefined."""


class UnstableSpec(PrssmError):
    """Linear system specification has spectral radius >= 1."""


class ParseError(PrssmError):
    """A data file cell could not be parsed; carries row/column context."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class MissingColumn(PrssmError):
    """A required CSV column is absent."""


class NonPositiveVariance(PrssmError):
    """A predictive variance is zero or negative where positivity is required."""


class Diverged(PrssmError):
    """Optimization aborted after repeated non-finite gradient steps."""


class NonFiniteGradient(PrssmError):
    """Gradient contains NaN or infinite entries; the step must be skipped."""
