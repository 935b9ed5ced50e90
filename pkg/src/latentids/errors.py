"""Exception types shared across the package."""


class LatentIdsError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(LatentIdsError, ValueError):
    """A record line could not be parsed.

    Attributes:
        line_number: 1-based line number of the offending line, if known.
    """

    def __init__(self, message: str, line_number: int | None = None) -> None:
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class RecordSchemaError(ParseError):
    """A record line has the wrong number of fields."""


class ConfigError(LatentIdsError, ValueError):
    """Invalid configuration values or unknown configuration keys."""


class DimensionError(LatentIdsError, ValueError):
    """Array shapes do not match the operation's contract."""


class StateError(LatentIdsError, RuntimeError):
    """An operation was called before its required predecessor."""


class NumericError(LatentIdsError, ArithmeticError):
    """A computation produced or would produce non-finite values."""


class TrainingDivergedError(NumericError):
    """Training loss became non-finite.

    Attributes:
        epoch: 0-based epoch at which divergence was detected.
        batch: 0-based batch index within the epoch.
    """

    def __init__(self, message: str, epoch: int, batch: int) -> None:
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch


class NotPositiveDefiniteError(NumericError):
    """Cholesky factorization failed on a non positive-definite matrix."""


class UndefinedCorrelationError(LatentIdsError, ValueError):
    """Correlation is undefined (zero variance or too few samples)."""


class UndefinedAngleError(LatentIdsError, ValueError):
    """Cosine distance is undefined for a zero-norm vector."""


class CompatibilityError(LatentIdsError, ValueError):
    """Stored artifacts are incompatible with the supplied inputs."""
