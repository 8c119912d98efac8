"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration or mismatched tensor/vector dimensions."""


class ActionProtocolError(ValueError):
    """Malformed action vector handed to the environment."""


class NumericsError(RuntimeError):
    """Non-finite value encountered where finiteness is a hard invariant."""


class CheckpointError(RuntimeError):
    """Unreadable or version-incompatible checkpoint."""
