"""Exception hierarchy shared across the package."""


class HopfError(Exception):
    """Base class for all package errors."""


class IngestError(HopfError):
    """Malformed input data (edge lists, dataset directories)."""


class ArgumentError(HopfError):
    """A caller-supplied argument violates a precondition."""


class ShapeError(HopfError):
    """Matrix dimensions do not line up."""


class ConfigError(HopfError):
    """Inconsistent or unsupported configuration."""


class NumericsError(HopfError):
    """Non-finite values where finite ones are required."""


class StateError(HopfError):
    """Stale or mismatched cached state."""


class TrainingError(HopfError):
    """Training diverged or failed; carries the epoch/batch location."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
