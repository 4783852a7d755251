"""Shared exception types."""


class ShapeError(ValueError):
    """Raised when tensor shapes or axes are inconsistent with an operation."""


class InvalidInputError(ValueError):
    """Raised when an input violates a documented precondition."""


class IntegrationError(RuntimeError):
    """ODE solver failed to reach the target time.

    Carries ``last_t``, the time the solver reached before giving up.
    """

    def __init__(self, message, last_t):
        super().__init__(message)
        self.last_t = float(last_t)


class NumericalError(RuntimeError):
    """A computation produced NaN or Inf where finite values are required."""


class ChecksumError(IOError):
    """A serialized file failed its integrity check."""


class VersionError(IOError):
    """A serialized file or model has an incompatible format version."""


class TrainingDiverged(RuntimeError):
    """Training loss became non-finite; a diagnostic checkpoint was written."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
