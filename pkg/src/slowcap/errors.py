"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class DomainError(ValueError):
    """An input lies outside the domain of an operation."""


class NonFiniteError(FloatingPointError):
    """A tensor would hold NaN or Inf values."""


class ConfigError(ValueError):
    """A configuration value violates its contract."""


class DivergenceError(FloatingPointError):
    """Optimization produced a non-finite loss."""

    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class CheckpointError(IOError):
    """A checkpoint or data file is malformed or corrupted."""
