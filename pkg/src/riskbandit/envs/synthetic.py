"""Quadratic synthetic environment and its D-dimensional polynomial variant."""
import numpy as np

from ..constraints import Constraint
from .base import Env


def synthetic_metrics(s, a):
    """Noiseless reward and the two constraint values for scalar action ``a``."""
    s0, s1, s2 = s[0], s[1], s[2]
    r = s0 * a * a + s1 * a
    c1 = s0 * a * a - s1 * a
    d = a - s2
    c2 = s0 * d * d - s1 * d
    return r, c1, c2


def synthetic_step(s, a, sigma_env, rng=None):
    a = float(np.asarray(a).reshape(-1)[0])
    r, c1, c2 = synthetic_metrics(s, a)
    if sigma_env > 0:
        xi = rng.normal(0.0, sigma_env, size=3)
        r, c1, c2 = r + xi[0], c1 + xi[1], c2 + xi[2]
    return r, c1, c2


class SyntheticQuadraticEnv(Env):
    """Three-dimensional uniform contexts, scalar action in ``[-2, 2]``."""

    context_dim = 3
    action_dim = 1

    def __init__(self, sigma_env=0.2, c_max=0.3, action_bound=2.0):
        self.sigma_env = float(sigma_env)
        self.action_low = np.array([-action_bound])
        self.action_high = np.array([action_bound])
        self.constraints = (Constraint(c_max), Constraint(c_max))

    def _draw_context(self):
        return self.rng.uniform(0.0, 1.0, size=3)

    def _evaluate(self, s, a):
        r, c1, c2 = synthetic_step(s, a, self.sigma_env, self.rng)
        return r, (c1, c2), {}


def polynomial_metrics(s, a):
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if s.shape != a.shape or s.ndim != 1:
        raise ValueError(f"context and action must both have length D, got {s.shape} and {a.shape}")
    powers = np.arange(1, s.size + 1)
    terms = s * a ** powers
    signs = np.where(powers % 2 == 0, 1.0, -1.0)
    return float(terms.sum()), float((signs * terms).sum())


def polynomial_step(s, a, sigma_env, rng=None):
    r, c = polynomial_metrics(s, a)
    if sigma_env > 0:
        xi = rng.normal(0.0, sigma_env, size=2)
        r, c = r + xi[0], c + xi[1]
    return r, c


class PolynomialEnv(Env):
    """Degree-D polynomial reward/constraint over D-dimensional contexts and actions."""

    def __init__(self, dim=2, sigma_env=0.2, c_max=0.3, action_bound=1.0):
        if int(dim) < 1:
            raise ValueError("dimension must be at least 1")
        self.dim = int(dim)
        self.context_dim = self.action_dim = self.dim
        self.sigma_env = float(sigma_env)
        self.action_low = np.full(self.dim, -action_bound)
        self.action_high = np.full(self.dim, action_bound)
        self.constraints = (Constraint(c_max),)

    def _draw_context(self):
        return self.rng.uniform(0.0, 1.0, size=self.dim)

    def _evaluate(self, s, a):
        r, c = polynomial_step(s, a, self.sigma_env, self.rng)
        return r, (c,), {}
