# tidb/core/errors.py
"""
Exception hierarchy. Every error knows the process exit code the CLI reports for it.
"""

from typing import Iterable


class TidbError(Exception):
    exit_code = 1


class ParameterError(TidbError, ValueError):
    """A numerical parameter is outside its valid range."""
    exit_code = 2


class ConfigError(TidbError):
    exit_code = 2


class CapacityError(TidbError):
    """A requested structure would exceed a configured size cap."""
    exit_code = 2


class DataError(TidbError):
    exit_code = 3


class ShapeError(DataError, ValueError):
    pass


class InputError(DataError, ValueError):
    pass


class FormatError(DataError):
    pass


class CoverageError(DataError):
    def __init__(self, missing: Iterable[int], message: str | None = None):
        self.missing = sorted(missing)
        super().__init__(message or f"manifest does not cover scale indices {self.missing}")


class TrainingDivergence(TidbError):
    exit_code = 4

    def __init__(self, epoch: int, last_finite_loss: float | None):
        self.epoch = epoch
        self.last_finite_loss = last_finite_loss
        super().__init__(
            f"training diverged at epoch {epoch} (last finite loss: {last_finite_loss})"
        )


class AcceptanceFailure(TidbError):
    """A finished experiment misses one or more acceptance criteria."""
    exit_code = 5

    def __init__(self, failed: Iterable[str]):
        self.failed = list(failed)
        super().__init__(f"acceptance criteria not met: {', '.join(self.failed)}")
