"""Quantile regression losses and quantile-vector helpers.

All loss functions broadcast over numpy arrays.  Residuals follow the
``u = target - estimate`` convention: a positive residual means the
estimate is too low.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

REWARD_N = 21
# quantile levels used by upper-bounded constraint critics
TAU_MAX = (0.1, 0.3, 0.5, 0.7, 0.8, 0.9, 0.99, 0.995, 0.999)
ALPHA_MAX = 0.995
ALPHA_MIN = 0.005

_MATCH_TOL = 1e-9


@dataclass(frozen=True)
class QuantileSet:
    """Strictly increasing quantile levels in (0, 1]."""

    taus: tuple

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        if not taus:
            raise ConfigError("quantile set must not be empty")
        if any(not (0.0 < t <= 1.0) for t in taus):
            raise ConfigError(f"quantile levels must lie in (0, 1]: {taus}")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ConfigError(f"quantile levels must be strictly increasing: {taus}")
        object.__setattr__(self, "taus", taus)

    def __len__(self):
        return len(self.taus)

    def __iter__(self):
        return iter(self.taus)

    def __contains__(self, alpha):
        return self.find(alpha) is not None

    def find(self, alpha):
        for i, t in enumerate(self.taus):
            if abs(t - alpha) <= _MATCH_TOL:
                return i
        return None

    def index(self, alpha):
        """Position of ``alpha``; risk levels are looked up, never interpolated."""
        i = self.find(alpha)
        if i is None:
            raise ConfigError(f"risk level {alpha} is not one of the quantile levels {self.taus}")
        return i

    @property
    def array(self):
        return np.asarray(self.taus)

    @classmethod
    def uniform(cls, n=REWARD_N):
        """``{i/n : i = 1..n}`` -- note this includes the level 1.0."""
        return cls(tuple(i / n for i in range(1, n + 1)))

    @classmethod
    def upper(cls):
        return cls(TAU_MAX)

    @classmethod
    def lower(cls):
        return cls(tuple(sorted(1.0 - t for t in TAU_MAX)))


def quantile_loss(u, tau):
    u = np.asarray(u, dtype=np.float64)
    return u * (tau - (u < 0))


def huber(u, kappa):
    if kappa <= 0:
        raise ConfigError(f"kappa must be positive, got {kappa}")
    u = np.asarray(u, dtype=np.float64)
    a = np.abs(u)
    return np.where(a <= kappa, 0.5 * u * u, kappa * (a - 0.5 * kappa))


def quantile_huber(u, tau, kappa):
    """Asymmetric Huber loss ``|tau - 1{u<0}| * huber(u) / kappa``."""
    u = np.asarray(u, dtype=np.float64)
    return np.abs(tau - (u < 0)) * huber(u, kappa) / kappa


def quantile_huber_grad(u, tau, kappa):
    """Derivative of :func:`quantile_huber` with respect to ``u``."""
    u = np.asarray(u, dtype=np.float64)
    dh = np.clip(u, -kappa, kappa)
    return np.abs(tau - (u < 0)) * dh / kappa


def _check_shapes(predicted, target, taus):
    predicted = np.asarray(predicted, dtype=np.float64)
    taus = np.asarray(list(taus), dtype=np.float64)
    if predicted.shape[-1] != taus.shape[0]:
        raise ValueError(
            f"prediction has {predicted.shape[-1]} quantiles, quantile set has {taus.shape[0]}")
    target = np.asarray(target, dtype=np.float64)
    if predicted.ndim == 2:
        target = target.reshape(-1, 1)
        if target.shape[0] != predicted.shape[0]:
            raise ValueError("target batch size does not match predictions")
    return predicted, target, taus


def critic_loss(predicted, target, taus, kappa):
    """Quantile Huber loss summed over quantiles, averaged over the batch.

    ``predicted`` is ``(N,)`` for one sample or ``(B, N)`` for a batch;
    ``target`` is a scalar or ``(B,)``.
    """
    predicted, target, taus = _check_shapes(predicted, target, taus)
    per = quantile_huber(target - predicted, taus, kappa)
    if per.ndim == 1:
        return float(per.sum())
    return float(per.sum(axis=1).mean())


def critic_loss_grad(predicted, target, taus, kappa):
    """Gradient of :func:`critic_loss` with respect to ``predicted``."""
    predicted, target, taus = _check_shapes(predicted, target, taus)
    g = -quantile_huber_grad(target - predicted, taus, kappa)
    if g.ndim == 2:
        g = g / g.shape[0]
    return g


def dist_mean(values):
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] == 0:
        raise ValueError("cannot take the mean of an empty quantile vector")
    return values.mean(axis=-1)


def quantile_value(values, taus, alpha):
    """The estimate stored at risk level ``alpha`` (exact lookup)."""
    if not isinstance(taus, QuantileSet):
        taus = QuantileSet(tuple(taus))
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != len(taus):
        raise ValueError("quantile vector length does not match quantile set")
    return values[..., taus.index(alpha)]
