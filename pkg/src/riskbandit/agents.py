"""Actor-critic learners for constrained contextual bandits.

Four variants share the replay buffer, exploration noise and the actor
update loop and differ only in their critics and in the scalar objective
the actor climbs:

``rancb``    one quantile critic per metric, penalties on the constraint
             critics' risk-level quantile, actor conditioned on the risk level
``ncb``      one scalar critic fitted to the penalised utility
``sc-dncb``  one quantile critic fitted to the penalised utility
``mc-ncb``   one scalar critic per metric, penalties on the critic means
"""
from dataclasses import dataclass, field

import numpy as np

from .constraints import Constraint
from .distributional import (ALPHA_MAX, ALPHA_MIN, QuantileSet, critic_loss,
                             critic_loss_grad)
from .errors import ConfigError, NumericError
from .nn import Adam, Mlp

AGENT_KINDS = ("rancb", "ncb", "sc-dncb", "mc-ncb")


def aggregate_reward(mean_reward, constraint_quantiles, lam):
    """Critic-mean reward minus hinge penalties on constraint quantiles.

    ``constraint_quantiles`` is a list of ``(value, bound, direction)``.
    """
    total = mean_reward
    for value, bound, direction in constraint_quantiles:
        total = total - lam * Constraint(bound, direction).excess(value)
    return total


def ncb_utility(r, constraints, bounds, lam):
    """Penalised utility on observed metrics; ``bounds`` holds :class:`Constraint` objects."""
    total = np.asarray(r, dtype=np.float64)
    for c, con in zip(constraints, bounds):
        total = total - lam * con.excess(c)
    return total


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform minibatch sampling."""

    def __init__(self, capacity, context_dim, action_dim, n_metrics):
        self.capacity = int(capacity)
        self.s = np.zeros((self.capacity, context_dim))
        self.a = np.zeros((self.capacity, action_dim))
        self.c = np.zeros((self.capacity, n_metrics))
        self.ptr = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, s, a, c):
        i = self.ptr
        self.s[i] = s
        self.a[i] = a
        self.c[i] = c
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size, rng):
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        replace = self.size < batch_size
        return rng.choice(self.size, size=batch_size, replace=replace)

    def sample(self, batch_size, rng):
        idx = self.sample_indices(batch_size, rng)
        return self.s[idx], self.a[idx], self.c[idx]


class OuNoise:
    """Ornstein-Uhlenbeck perturbations with unit time step, mean zero."""

    def __init__(self, dim, theta=0.15, sigma=0.15, rng=None):
        self.theta = theta
        self.sigma = sigma
        self.rng = rng if rng is not None else np.random.default_rng()
        self.x = np.zeros(dim)

    def reset(self):
        self.x[:] = 0.0

    def step(self):
        xi = self.rng.standard_normal(self.x.shape)
        self.x = self.x - self.theta * self.x + self.sigma * xi
        return self.x.copy()


def ou_step(noise):
    return noise.step()


@dataclass
class AgentConfig:
    kind: str = "rancb"
    lam: float = 2.5
    batch_size: int = 64
    kappa: float = 1.0
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    buffer_capacity: int = 2000
    hidden: tuple = (256, 256)
    reward_quantiles: int = 21
    # None picks the upper/lower default set from the constraint direction
    constraint_quantiles: tuple = None
    alpha: float = None
    train_alphas: tuple = None
    noise_theta: float = 0.15
    noise_sigma: float = 0.15

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ConfigError(f"agent.kind must be one of {AGENT_KINDS}, got {self.kind!r}")
        for name in ("lam", "batch_size", "kappa", "actor_lr", "critic_lr",
                     "buffer_capacity", "reward_quantiles"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"agent.{name} must be positive")
        if self.noise_theta < 0 or self.noise_sigma < 0:
            raise ConfigError("noise parameters must be non-negative")
        self.hidden = tuple(int(h) for h in self.hidden)
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")
        if self.constraint_quantiles is not None:
            self.constraint_quantiles = tuple(self.constraint_quantiles)
        if self.train_alphas is not None:
            self.train_alphas = tuple(self.train_alphas)


@dataclass
class RiskProfile:
    """Per-constraint bounds plus the risk levels the actor is trained and run with."""

    constraints: list
    quantiles: QuantileSet
    alpha: float
    train_alphas: tuple = field(default=())

    def __post_init__(self):
        self.quantiles.index(self.alpha)
        if not self.train_alphas:
            self.train_alphas = tuple(self.quantiles)
        for a in self.train_alphas:
            self.quantiles.index(a)
        if not any(abs(a - self.alpha) < 1e-9 for a in self.train_alphas):
            raise ConfigError(f"default risk level {self.alpha} must belong to the training set")

    @classmethod
    def build(cls, constraints, config):
        directions = {c.direction for c in constraints}
        if len(directions) > 1 and config.constraint_quantiles is None:
            raise ConfigError("mixed constraint directions need explicit constraint_quantiles")
        lower = directions == {"lower"}
        if config.constraint_quantiles is not None:
            qs = QuantileSet(config.constraint_quantiles)
        else:
            qs = QuantileSet.lower() if lower else QuantileSet.upper()
        alpha = config.alpha
        if alpha is None:
            alpha = ALPHA_MIN if lower else ALPHA_MAX
        return cls(list(constraints), qs, float(alpha), tuple(config.train_alphas or ()))

    def alpha_vector(self, alpha=None):
        alpha = self.alpha if alpha is None else float(alpha)
        self.quantiles.index(alpha)
        return np.full(len(self.constraints), alpha)


class _Critic:
    """A critic network, its optimiser and how it is fitted."""

    def __init__(self, net, lr, taus=None):
        self.net = net
        self.opt = Adam([net.flat], lr=lr)
        self.taus = taus  # None -> scalar output fitted with squared error

    def fit(self, x, target, kappa):
        pred, cache = self.net.forward_cache(x)
        if self.taus is None:
            err = pred[:, 0] - target
            loss = float(np.mean(err * err))
            g = (2.0 / len(err)) * err[:, None]
        else:
            loss = critic_loss(pred, target, self.taus.taus, kappa)
            g = critic_loss_grad(pred, target, self.taus.taus, kappa)
        if not np.isfinite(loss):
            raise NumericError("non-finite critic loss")
        grad, _ = self.net.backward(x, g, cache, flat=True, input_grad=False)
        self.opt.step([grad])
        return loss


class Agent:
    """Shared machinery; subclasses define critics, targets and actor objective."""

    kind = None

    def __init__(self, context_dim, action_low, action_high, constraints, config=None,
                 rngs=None):
        self.config = config if config is not None else AgentConfig(kind=self.kind)
        cfg = self.config
        if rngs is None:
            rngs = spawn_streams(0)
        self.context_dim = int(context_dim)
        self.action_low = np.atleast_1d(np.asarray(action_low, dtype=np.float64))
        self.action_high = np.atleast_1d(np.asarray(action_high, dtype=np.float64))
        self.action_dim = self.action_low.size
        self.constraints = list(constraints)
        self.M = len(self.constraints)
        self.risk = RiskProfile.build(self.constraints, cfg) if self.M else None
        self.replay_rng = rngs["replay"]
        init = rngs["init"]

        actor_in = self.context_dim + self._alpha_inputs()
        self.actor = Mlp([actor_in, *cfg.hidden, self.action_dim], output="squash",
                         low=self.action_low, high=self.action_high, rng=init)
        self.actor_opt = Adam([self.actor.flat], lr=cfg.actor_lr)
        critic_in = self.context_dim + self.action_dim
        self.critics = [
            _Critic(Mlp([critic_in, *cfg.hidden, 1 if taus is None else len(taus)], rng=init),
                    cfg.critic_lr, taus)
            for taus in self._critic_quantiles()
        ]
        self.noise = OuNoise(self.action_dim, cfg.noise_theta, cfg.noise_sigma, rngs["noise"])
        self.buffer = ReplayBuffer(cfg.buffer_capacity, self.context_dim, self.action_dim,
                                   self.M + 1)
        self.discarded = 0
        self.updates = 0

    # -- variant hooks --------------------------------------------------
    def _alpha_inputs(self):
        return 0

    def _critic_quantiles(self):
        raise NotImplementedError

    def _critic_targets(self, c):
        raise NotImplementedError

    def _objective(self, outs, alpha):
        """Per-sample objective and its gradient w.r.t. each critic output."""
        raise NotImplementedError

    def _train_alphas(self):
        return (None,)

    # -- acting ---------------------------------------------------------
    def actor_input(self, s, alpha=None):
        s = np.asarray(s, dtype=np.float64)
        if s.shape[-1] != self.context_dim:
            raise ValueError(f"context has dimension {s.shape[-1]}, agent expects {self.context_dim}")
        return s

    def select_action(self, s, alpha=None, explore=False):
        a = self.actor.forward(self.actor_input(s, alpha))
        if explore:
            a = np.clip(a + self.noise.step(), self.action_low, self.action_high)
        return a

    def observe(self, s, a, reward, constraints):
        """Store one interaction; non-finite observations are dropped and counted."""
        c = np.concatenate([[reward], np.atleast_1d(constraints)]).astype(np.float64)
        if c.size != self.M + 1:
            raise ValueError(f"expected {self.M + 1} metrics, got {c.size}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
            self.discarded += 1
            return False
        self.buffer.add(s, a, c)
        return True

    # -- learning -------------------------------------------------------
    def ready(self):
        return len(self.buffer) >= self.config.batch_size

    def update(self):
        """One training step on a fresh minibatch, once the buffer holds a batch."""
        if not self.ready():
            return None
        batch = self.buffer.sample(self.config.batch_size, self.replay_rng)
        return self.train_step(batch)

    def train_step(self, batch):
        s, a, c = batch
        cfg = self.config
        x = np.concatenate([s, a], axis=1)
        targets = self._critic_targets(c)
        report = {"critic_loss": [cr.fit(x, targets[:, m], cfg.kappa)
                                  for m, cr in enumerate(self.critics)]}
        report["objective"] = [self._actor_update(s, alpha) for alpha in self._train_alphas()]
        self.updates += 1
        return report

    def actor_gradient(self, s, alpha=None):
        """Flat gradient of the negated mean objective w.r.t. the actor parameters."""
        B = s.shape[0]
        xin = self.actor_input(s, alpha)
        acts, acache = self.actor.forward_cache(xin)
        x = np.concatenate([s, acts], axis=1)
        caches, outs = [], []
        for cr in self.critics:
            out, cache = cr.net.forward_cache(x)
            outs.append(out)
            caches.append(cache)
        value, douts = self._objective(outs, alpha)
        dj_da = np.zeros_like(acts)
        for cr, cache, d in zip(self.critics, caches, douts):
            if d is None:
                continue
            _, dx = cr.net.backward(x, d / B, cache, param_grads=False)
            dj_da += dx[:, self.context_dim:]
        grad, _ = self.actor.backward(xin, -dj_da, acache, flat=True, input_grad=False)
        return grad, float(np.mean(value))

    def _actor_update(self, s, alpha):
        grad, value = self.actor_gradient(s, alpha)
        if not np.isfinite(value):
            raise NumericError("non-finite actor objective")
        self.actor_opt.step([grad])
        return value

    def objective_value(self, s, alpha=None):
        """Mean actor objective at the current parameters (no update)."""
        acts = self.actor.forward(self.actor_input(s, alpha))
        x = np.concatenate([s, acts], axis=1)
        outs = [cr.net.forward(x) for cr in self.critics]
        return float(np.mean(self._objective(outs, alpha)[0]))

    # -- persistence ----------------------------------------------------
    def networks(self):
        return [self.actor] + [cr.net for cr in self.critics]

    def optimizers(self):
        return [self.actor_opt] + [cr.opt for cr in self.critics]

    def param_snapshot(self):
        return np.concatenate([net.get_flat() for net in self.networks()])


class RancbAgent(Agent):
    """Risk-aware learner: distributional critic per metric, risk-conditioned actor."""

    kind = "rancb"

    def _alpha_inputs(self):
        return self.M

    def _critic_quantiles(self):
        reward = QuantileSet.uniform(self.config.reward_quantiles)
        return [reward] + [self.risk.quantiles] * self.M

    def _critic_targets(self, c):
        return c

    def _train_alphas(self):
        return self.risk.train_alphas if self.M else (None,)

    def actor_input(self, s, alpha=None):
        s = super().actor_input(s)
        if not self.M:
            return s
        av = self.risk.alpha_vector(alpha)
        if s.ndim == 1:
            return np.concatenate([s, av])
        return np.concatenate([s, np.broadcast_to(av, (s.shape[0], self.M))], axis=1)

    def _objective(self, outs, alpha):
        alpha = self.risk.alpha if (alpha is None and self.M) else alpha
        q0 = outs[0]
        value = q0.mean(axis=1)
        douts = [np.full_like(q0, 1.0 / q0.shape[1])]
        lam = self.config.lam
        for con, q in zip(self.constraints, outs[1:]):
            j = self.risk.quantiles.index(alpha)
            ex = con.sign * (q[:, j] - con.bound)
            active = ex > 0
            value = value - lam * np.where(active, ex, 0.0)
            if not active.any():
                douts.append(None)
                continue
            d = np.zeros_like(q)
            d[:, j] = -lam * con.sign * active
            douts.append(d)
        return value, douts


class NcbAgent(Agent):
    """Single scalar critic on the penalised utility, squared-error fit."""

    kind = "ncb"

    def _critic_quantiles(self):
        return [None]

    def _critic_targets(self, c):
        u = ncb_utility(c[:, 0], c[:, 1:].T, self.constraints, self.config.lam)
        return u[:, None]

    def _objective(self, outs, alpha):
        out = outs[0]
        return out[:, 0], [np.ones_like(out)]


class ScDncbAgent(NcbAgent):
    """Single quantile critic on the penalised utility; actor climbs its mean."""

    kind = "sc-dncb"

    def _critic_quantiles(self):
        return [QuantileSet.uniform(self.config.reward_quantiles)]

    def _objective(self, outs, alpha):
        q = outs[0]
        return q.mean(axis=1), [np.full_like(q, 1.0 / q.shape[1])]


class McNcbAgent(Agent):
    """Scalar critic per metric; penalties applied to the constraint critics' means."""

    kind = "mc-ncb"

    def _critic_quantiles(self):
        return [None] * (self.M + 1)

    def _critic_targets(self, c):
        return c

    def _objective(self, outs, alpha):
        value = outs[0][:, 0].copy()
        douts = [np.ones_like(outs[0])]
        lam = self.config.lam
        for con, q in zip(self.constraints, outs[1:]):
            ex = con.sign * (q[:, 0] - con.bound)
            active = ex > 0
            value -= lam * np.where(active, ex, 0.0)
            douts.append((-lam * con.sign * active)[:, None] if active.any() else None)
        return value, douts


_AGENTS = {cls.kind: cls for cls in (RancbAgent, NcbAgent, ScDncbAgent, McNcbAgent)}


def spawn_streams(seed):
    """Independent generators for env, noise, init and replay, in that order.

    ``SeedSequence(seed).spawn(4)`` decides the split, so a stream only
    depends on the global seed and its position.
    """
    names = ("env", "noise", "init", "replay")
    children = np.random.SeedSequence(int(seed)).spawn(len(names))
    return {n: np.random.default_rng(ss) for n, ss in zip(names, children)}


def make_agent(config, context_dim, action_low, action_high, constraints, rngs=None):
    if isinstance(config, str):
        config = AgentConfig(kind=config)
    return _AGENTS[config.kind](context_dim, action_low, action_high, constraints, config, rngs)
