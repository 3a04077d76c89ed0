from collections import namedtuple

import numpy as np

StepResult = namedtuple("StepResult", "reward constraints context info")


def as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class Env:
    """Contextual bandit environment.

    ``reset`` returns the first context; ``step(a)`` scores the action in
    the current context and returns the metrics together with the next,
    independently drawn, context.
    """

    context_dim = None
    action_dim = None
    action_low = None
    action_high = None
    constraints = ()

    @property
    def M(self):
        return len(self.constraints)

    def reset(self, seed=None):
        self.rng = as_rng(seed)
        self.context = self._draw_context()
        return self.context.copy()

    def step(self, a):
        a = np.atleast_1d(np.asarray(a, dtype=np.float64))
        if a.shape != (self.action_dim,):
            raise ValueError(f"action has shape {a.shape}, expected ({self.action_dim},)")
        reward, cons, info = self._evaluate(self.context, a)
        self.context = self._draw_context()
        return StepResult(float(reward), np.asarray(cons, dtype=np.float64),
                          self.context.copy(), info)

    def _draw_context(self):
        raise NotImplementedError

    def _evaluate(self, s, a):
        raise NotImplementedError

    def get_state(self):
        return {"rng": self.rng.bit_generator.state}, {"context": self.context.copy()}

    def set_state(self, meta, arrays):
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = meta["rng"]
        self.context = np.array(arrays["context"], dtype=np.float64)
