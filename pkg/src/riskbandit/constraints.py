from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Constraint:
    """A bound on one metric; ``direction`` is ``"upper"`` (c <= bound) or ``"lower"``."""

    bound: float
    direction: str = "upper"

    def __post_init__(self):
        if self.direction not in ("upper", "lower"):
            raise ConfigError(f"constraint direction must be 'upper' or 'lower', not {self.direction!r}")

    @property
    def sign(self):
        return 1.0 if self.direction == "upper" else -1.0

    def excess(self, value):
        """How far ``value`` is on the wrong side of the bound (0 if satisfied)."""
        return np.maximum(self.sign * (np.asarray(value, dtype=np.float64) - self.bound), 0.0)
