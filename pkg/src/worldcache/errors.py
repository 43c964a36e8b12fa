"""Exception types shared across the package.

Every error raised by the library proper derives from WorldCacheError so
callers can catch policy/domain failures separately from programming errors.
"""


class WorldCacheError(Exception):
    """Base class for all library errors."""


class DimensionError(WorldCacheError, ValueError):
    """Shape or length mismatch between token matrices / label vectors."""


class OrderingError(WorldCacheError, ValueError):
    """Timestep sequence violates the required strictly-decreasing order."""


class InsufficientHistoryError(WorldCacheError, ValueError):
    """An operation needs more recorded FULL outputs than are available."""


class ParameterError(WorldCacheError, ValueError):
    """A configuration value is outside its documented domain."""


class DomainError(WorldCacheError, ValueError):
    """A runtime scalar (e.g. a drift increment) is outside its domain."""


class ConfigError(WorldCacheError, ValueError):
    """Experiment configuration file is malformed (unknown key, bad type)."""


class TraceFormatError(WorldCacheError, ValueError):
    """A trace file violates the container format.

    byte_offset points at the position the violation was detected, when known.
    """

    def __init__(self, message: str, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset
