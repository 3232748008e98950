"""Exception taxonomy shared across the package.

ConfigurationError: bad shapes, dims, or settings detected at build/call time.
UsageError: an API called outside its contract (wrong argument, bad CLI flag).
NumericError: a forward pass produced NaN/Inf, or an optimizer hit one.
CheckpointLoadError: file corrupt or incompatible with the current config.
InsufficientDataError: retryable; the replay buffer cannot satisfy a request yet.
"""


class DrgError(Exception):
    pass


class ConfigurationError(DrgError):
    pass


class UsageError(DrgError):
    pass


class NumericError(DrgError):
    pass


class CheckpointLoadError(DrgError):
    pass


class InsufficientDataError(DrgError):
    """Raised when the buffer holds too little data; collect more and retry."""
