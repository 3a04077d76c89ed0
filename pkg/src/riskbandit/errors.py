class ConfigError(ValueError):
    """Invalid configuration; raised before any training step runs."""


class NumericError(FloatingPointError):
    """A non-finite gradient, loss or parameter showed up during training."""


class CheckpointError(RuntimeError):
    """Checkpoint file is unreadable, corrupted or incompatible."""
