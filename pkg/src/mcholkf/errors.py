"""Exception types shared across the package.

Plain argument/shape violations raise ValueError directly; these classes
cover the failure kinds that callers may want to catch separately.
"""


class ConfigurationError(ValueError):
    """A configuration value is invalid or inconsistent."""


class CapacityError(RuntimeError):
    """A dense code path was requested beyond its size cap."""


class NumericalError(RuntimeError):
    """A linear solve or eigendecomposition failed numerically."""


class ConsistencyError(RuntimeError):
    """An internal cross-check failed (assertion-level condition)."""


class DivergenceError(RuntimeError):
    """Model state became non-finite during propagation."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
