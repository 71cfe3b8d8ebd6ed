"""Exception hierarchy shared across the package."""


class LivePtychoError(Exception):
    """Base class for all package errors."""


class InvalidInputError(LivePtychoError, ValueError):
    """Non-finite samples, negative amplitudes, mismatched shapes."""


class BoundsError(LivePtychoError, IndexError):
    """A probe window does not lie fully inside the target array."""


class ConfigError(LivePtychoError, ValueError):
    """Inconsistent or out-of-range configuration."""


class DataError(LivePtychoError, ValueError):
    """Malformed or unreadable dataset / image input."""


class StateError(LivePtychoError, RuntimeError):
    """Operation not permitted in the engine's current phase."""
