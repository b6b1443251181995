"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor or array shapes are incompatible with an operation."""


class ConfigError(ValueError):
    """A configuration value is missing, unknown or out of range."""


class DegenerateLimbError(ValueError):
    """A limb has coincident endpoints or an empty image region."""


class ParseError(ValueError):
    """A data file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(ValueError):
    """A checkpoint file is corrupt or does not match the expected layout."""


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""


class InvariantViolation(AssertionError):
    """A numerical invariant (gradient identity, oracle match) failed."""
