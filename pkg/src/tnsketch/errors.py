"""Exception types shared by every module."""


class TnsketchError(Exception):
    """Base class for library errors."""


class InvalidArgumentError(TnsketchError, ValueError):
    """Malformed input: bad shapes, indices, parameters or files."""


class ResourceLimitError(TnsketchError, MemoryError):
    """A dense materialization or enumeration would exceed a configured cap."""


class InvalidStateError(TnsketchError, RuntimeError):
    """An object is missing data needed for the operation (e.g. factors)."""


class RetrySignal(TnsketchError):
    """A randomized draw was numerically degenerate; the caller should redraw."""
