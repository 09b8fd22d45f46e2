"""Exception hierarchy shared across the package.

Every error raised by library code derives from :class:`SertError` so callers
(CLI, service) can map failures to exit codes / HTTP statuses in one place.
"""


class SertError(Exception):
    """Base class for all package errors."""


class DimensionError(SertError):
    """Shapes or extents do not line up for an operation."""


class NumericError(SertError):
    """Non-finite values (NaN/Inf) encountered where finite math is required."""


class ConfigError(SertError):
    """Invalid model or module configuration."""


class UsageError(SertError):
    """An API was called out of protocol (e.g. backward on a spent tape)."""


class ParameterError(SertError):
    """Out-of-range argument to a noise generator or metric."""


class InternalError(SertError):
    """A precondition that upstream code must guarantee was violated."""


class FormatError(SertError):
    """A file (image container, checkpoint, recipe, config) failed validation."""


class MetricUndefinedError(SertError):
    """A metric has no defined value for the given inputs."""
