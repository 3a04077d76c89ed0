from ..errors import ConfigError
from .base import Env, StepResult
from .ran import (PeriodResult, RanConfig, RanOffloadingEnv, UnitModel, context_histogram,
                  load_trace, simulate_period)
from .synthetic import (PolynomialEnv, SyntheticQuadraticEnv, polynomial_metrics,
                        polynomial_step, synthetic_metrics, synthetic_step)

ENV_KINDS = ("synthetic", "polynomial", "ran")


def make_env(kind, sigma_env=0.2, dim=2, ran=None, epsilon=None):
    """Build an environment from its kind and the parameters that kind uses."""
    if kind == "synthetic":
        return SyntheticQuadraticEnv(sigma_env=sigma_env)
    if kind == "polynomial":
        return PolynomialEnv(dim=dim, sigma_env=sigma_env)
    if kind == "ran":
        params = dict(ran or {})
        if epsilon is not None:
            params["epsilon"] = epsilon
        return RanOffloadingEnv(RanConfig.from_dict(params))
    raise ConfigError(f"env.kind must be one of {ENV_KINDS}, got {kind!r}")


__all__ = [
    "ENV_KINDS", "Env", "PeriodResult", "PolynomialEnv", "RanConfig", "RanOffloadingEnv",
    "StepResult", "SyntheticQuadraticEnv", "UnitModel", "context_histogram", "load_trace",
    "make_env", "polynomial_metrics", "polynomial_step", "simulate_period",
    "synthetic_metrics", "synthetic_step",
]
