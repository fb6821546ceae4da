"""Exception types shared across the package."""

from typing import Optional


class UsageError(Exception):
    """Bad command-line usage (exit code 1)."""


# Invalid arguments

class SceneSpecError(ValueError):
    """Procedural scene parameters out of range."""


class WeightSumError(ValueError):
    """Interpolation weights negative or not summing to one."""


class EmptyValidSetError(ValueError):
    """A consistency metric was asked for with no valid pixels."""


class ViewMismatchError(ValueError):
    """Views belong to different scene bundles or do not exist."""


class InvalidInputError(ValueError):
    """Input array has the wrong shape, size or non-finite values."""


class ConfigError(ValueError):
    """Malformed or unknown configuration key."""


# Numerical failures

class EigenDecompositionError(RuntimeError):
    """Jacobi iteration did not converge."""


class SingularSplatError(RuntimeError):
    """A projected covariance is not invertible after regularization."""


class NonFiniteLossError(RuntimeError):
    """Loss became NaN or infinite during training."""

    def __init__(self, step: int, group: str, value: float):
        self.step = step
        self.group = group
        self.value = value
        super().__init__(f"Non-finite loss {value} at step {step} (parameter group: {group})")


# File formats

class FormatError(ValueError):
    """Base class for malformed artifact files."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class WrongMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    def __init__(self, what: str, expected: int, actual: int, offset: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"Truncated {what}: expected {expected} bytes, got {actual}", offset=offset)


class ChecksumError(FormatError):
    pass
