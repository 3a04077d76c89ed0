"""Training/inference runs, multi-seed aggregation and parameter sweeps."""
import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import checkpoint
from .agents import AgentConfig, make_agent, spawn_streams
from .constraints import Constraint
from .envs import ENV_KINDS, make_env
from .errors import ConfigError

log = logging.getLogger(__name__)

SWEEP_AXES = ("sigma_env", "alpha", "lambda", "epsilon", "dim")
DEFAULT_T_TRAIN = {"synthetic": 5000, "polynomial": 5000, "ran": 1500}
Z95 = 1.959963984540054


@dataclass
class ExperimentSpec:
    env: dict = field(default_factory=lambda: {"kind": "synthetic"})
    agent: AgentConfig = field(default_factory=AgentConfig)
    t_train: int = None
    t_infer: int = 500
    seeds: tuple = (0,)
    # risk level used in the inference phase; None -> the agent's default
    infer_alpha: float = None

    def __post_init__(self):
        if isinstance(self.agent, dict):
            self.agent = AgentConfig(**self.agent)
        self.env = dict(self.env)
        if self.env.get("kind") not in ENV_KINDS:
            raise ConfigError(f"env.kind must be one of {ENV_KINDS}, got {self.env.get('kind')!r}")
        if self.t_train is None:
            self.t_train = DEFAULT_T_TRAIN[self.env["kind"]]
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("experiment needs at least one seed")
        if self.t_train < 0 or self.t_infer < 0:
            raise ConfigError("t_train and t_infer must be non-negative")

    def to_dict(self):
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def build_env(self):
        e = {k: v for k, v in self.env.items() if k != "kind"}
        return make_env(self.env["kind"], **e)

    def build_agent(self, env, rngs):
        return make_agent(self.agent, env.context_dim, env.action_low, env.action_high,
                          env.constraints, rngs)

    def validate(self):
        """Build env and agent once so bad dimensions or risk levels fail before any step."""
        env = self.build_env()
        agent = self.build_agent(env, spawn_streams(0))
        if self.infer_alpha is not None and agent.risk is not None:
            agent.risk.alpha_vector(self.infer_alpha)
        return env, agent


# -- metrics ------------------------------------------------------------

def step_violation(c, constraints):
    """Per-step sum of constraint excesses; ``c`` has shape ``(T, M)``."""
    c = np.asarray(c, dtype=np.float64).reshape(len(c), -1)
    total = np.zeros(len(c))
    for m, con in enumerate(constraints):
        total += con.excess(c[:, m])
    return total


def accumulated_violation(c, constraints):
    return np.cumsum(step_violation(c, constraints))


def mean_unreliability(zeta, epsilon):
    """``((1-eps) - mean(zeta))`` clamped at zero, and the signed value."""
    zeta = np.asarray(zeta, dtype=np.float64)
    signed = float((1.0 - epsilon) - zeta.mean()) if zeta.size else -float(epsilon)
    return max(signed, 0.0), signed


def ci95(values):
    """Mean and normal-approximation 95% half-width over runs."""
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return float("nan"), float("nan")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(Z95 * v.std(ddof=1) / np.sqrt(v.size))


# -- run logs -----------------------------------------------------------

@dataclass
class RunLog:
    seed: int
    constraints: list
    phase: np.ndarray
    reward: np.ndarray
    c: np.ndarray
    a: np.ndarray
    energy_scale: float = None
    label: str = ""

    @property
    def t(self):
        return np.arange(len(self.reward))

    @property
    def gamma(self):
        return accumulated_violation(self.c, self.constraints)

    def _mask(self, phase):
        return self.phase == phase

    def summary(self):
        train, infer = self._mask("train"), self._mask("infer")
        viol = step_violation(self.c, self.constraints)
        gamma = np.cumsum(viol)

        def mean(x, m):
            return float(x[m].mean()) if m.any() else float("nan")

        out = {
            "seed": self.seed,
            "steps_train": int(train.sum()),
            "steps_infer": int(infer.sum()),
            "train_mean_reward": mean(self.reward, train),
            "infer_mean_reward": mean(self.reward, infer),
            "train_mean_violation": mean(viol, train),
            "infer_mean_violation": mean(viol, infer),
            "train_final_gamma": float(gamma[train][-1]) if train.any() else 0.0,
            "final_gamma": float(gamma[-1]) if gamma.size else 0.0,
        }
        lower = [m for m, con in enumerate(self.constraints) if con.direction == "lower"]
        if lower:
            con = self.constraints[lower[0]]
            zeta = self.c[infer, lower[0]]
            clamped, signed = mean_unreliability(zeta, 1.0 - con.bound)
            out["infer_mean_reliability"] = float(zeta.mean()) if zeta.size else float("nan")
            out["infer_mean_unreliability"] = clamped
            out["infer_signed_unreliability"] = signed
        if self.energy_scale is not None:
            out["infer_mean_energy"] = -out["infer_mean_reward"] * self.energy_scale
            out["train_mean_energy"] = -out["train_mean_reward"] * self.energy_scale
        return out

    def header(self):
        M, d = self.c.shape[1], self.a.shape[1]
        return (["t", "phase", "reward"] + [f"c{m + 1}" for m in range(M)] + ["gamma"]
                + [f"a{j + 1}" for j in range(d)])

    def to_csv(self, path):
        gamma = self.gamma
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for t in range(len(self.reward)):
                w.writerow([t, self.phase[t], repr(float(self.reward[t]))]
                           + [repr(float(x)) for x in self.c[t]]
                           + [repr(float(gamma[t]))] + [repr(float(x)) for x in self.a[t]])

    @classmethod
    def from_csv(cls, path, constraints, seed=0, energy_scale=None):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, rows = rows[0], rows[1:]
        M = sum(1 for h in head if h.startswith("c"))
        d = sum(1 for h in head if h.startswith("a"))
        data = np.array([[float(x) for x in r[2:]] for r in rows]).reshape(len(rows), -1)
        return cls(seed, list(constraints), np.array([r[1] for r in rows]), data[:, 0],
                   data[:, 1:1 + M], data[:, 2 + M:2 + M + d], energy_scale)


# -- runs ---------------------------------------------------------------

class Runner:
    """One seed of one experiment: env, agent and the growing log."""

    def __init__(self, spec, seed):
        self.spec = spec
        self.seed = int(seed)
        rngs = spawn_streams(self.seed)
        self.env = spec.build_env()
        self.agent = spec.build_agent(self.env, rngs)
        self.s = self.env.reset(rngs["env"])
        self.t = 0
        self._phase, self._reward, self._c, self._a = [], [], [], []

    def step(self, train=True, alpha=None):
        a = self.agent.select_action(self.s, alpha=alpha, explore=train)
        res = self.env.step(a)
        if train:
            self.agent.observe(self.s, a, res.reward, res.constraints)
            self.agent.update()
        self._phase.append("train" if train else "infer")
        self._reward.append(res.reward)
        self._c.append(res.constraints)
        self._a.append(np.atleast_1d(a))
        self.s = res.context
        self.t += 1
        return res

    def train(self, n):
        for _ in range(n):
            self.step(True)

    def infer(self, n, alpha=None):
        alpha = self.spec.infer_alpha if alpha is None else alpha
        for _ in range(n):
            self.step(False, alpha)

    def run(self):
        remaining_train = max(self.spec.t_train - self.t, 0)
        self.train(remaining_train)
        done_infer = max(self.t - self.spec.t_train, 0)
        self.infer(self.spec.t_infer - done_infer)
        return self.log()

    def log(self, label=""):
        env = self.env
        M, d = env.M, env.action_dim
        scale = getattr(getattr(env, "cfg", None), "energy_scale", None)
        return RunLog(self.seed, list(env.constraints), np.array(self._phase, dtype="<U5"),
                      np.array(self._reward, dtype=np.float64),
                      np.array(self._c, dtype=np.float64).reshape(-1, M),
                      np.array(self._a, dtype=np.float64).reshape(-1, d), scale, label)

    # -- checkpoints ----------------------------------------------------
    def save(self, path):
        meta, arrays = checkpoint.agent_state(self.agent)
        env_meta, env_arrays = self.env.get_state()
        arrays.update({f"env_{k}": v for k, v in env_arrays.items()})
        lg = self.log()
        arrays.update({"log_reward": lg.reward, "log_c": lg.c, "log_a": lg.a,
                       "log_phase": (lg.phase == "train").astype(np.int8), "s": self.s})
        meta = {"agent": meta, "env": env_meta, "spec": self.spec.to_dict(),
                "seed": self.seed, "t": self.t}
        checkpoint.save(path, meta, arrays)

    @classmethod
    def load(cls, path, spec=None):
        meta, arrays = checkpoint.load(path)
        if spec is None:
            spec = ExperimentSpec.from_dict(meta["spec"])
        self = cls(spec, meta["seed"])
        checkpoint.restore_agent(self.agent, meta["agent"], arrays)
        if spec.to_dict()["env"] == meta["spec"]["env"]:
            self.env.set_state(meta["env"], {k[4:]: v for k, v in arrays.items()
                                             if k.startswith("env_")})
            self.s = np.array(arrays["s"])
            n = int(meta["t"])
            self.t = n
            self._phase = ["train" if p else "infer" for p in arrays["log_phase"]]
            self._reward = list(arrays["log_reward"])
            self._c = list(arrays["log_c"])
            self._a = list(arrays["log_a"])
        return self


def run_seed(spec, seed):
    return Runner(spec, seed).run()


def _map(fn, args, jobs):
    if jobs and jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(fn, *a) for a in args]
            return [_outcome(f.result) for f in futs]
    return [_outcome(lambda a=a: fn(*a)) for a in args]


def _outcome(call):
    try:
        return call(), None
    except Exception as exc:  # a failed cell must not stop the sweep
        log.warning("run failed: %s", exc)
        return None, f"{type(exc).__name__}: {exc}"


def run(spec, jobs=1):
    """Train then infer for every seed; returns one :class:`RunLog` per seed."""
    spec.validate()
    if jobs and jobs > 1 and len(spec.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(run_seed, spec, seed) for seed in spec.seeds]
            return [f.result() for f in futs]
    return [run_seed(spec, seed) for seed in spec.seeds]


# -- sweeps -------------------------------------------------------------

def apply_axis(spec, axis, value):
    """Copy of ``spec`` with one sweep parameter replaced."""
    if axis == "sigma_env":
        if value < 0:
            raise ConfigError("sigma_env must be non-negative")
        return replace(spec, env={**spec.env, "sigma_env": float(value)})
    if axis == "lambda":
        if value <= 0:
            raise ConfigError("lambda must be positive")
        return replace(spec, agent=replace(spec.agent, lam=float(value)))
    if axis == "epsilon":
        if not 0 < value < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        return replace(spec, env={**spec.env, "epsilon": float(value)})
    if axis == "dim":
        if int(value) != value or value < 1:
            raise ConfigError("dim must be a positive integer")
        return replace(spec, env={**spec.env, "dim": int(value)})
    if axis == "alpha":
        return replace(spec, infer_alpha=float(value))
    raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")


def _alpha_cell(spec, seed, alphas):
    """Train once, then run the inference phase separately for every risk level."""
    runner = Runner(spec, seed)
    runner.train(spec.t_train)
    env_state = runner.env.get_state()
    base = (runner.t, runner.s, list(runner._phase), list(runner._reward),
            list(runner._c), list(runner._a))
    logs = []
    for alpha in alphas:
        runner.env.set_state(*_copy_state(env_state))
        runner.t, runner.s = base[0], base[1]
        runner._phase, runner._reward, runner._c, runner._a = (list(x) for x in base[2:])
        runner.infer(spec.t_infer, alpha)
        logs.append(runner.log(label=str(alpha)))
    return logs


def _copy_state(state):
    meta, arrays = state
    return meta, {k: np.array(v, copy=True) for k, v in arrays.items()}


@dataclass
class SweepResult:
    axis: str
    values: list
    logs: dict        # value -> list of RunLog
    failures: list    # (value, seed, message)
    table: list       # one dict per value

    def curves(self, value, what="gamma", phase="train"):
        """Mean and 15th/85th percentile band across seeds."""
        runs = self.logs.get(value) or []
        series = []
        for lg in runs:
            m = lg.phase == phase
            y = lg.gamma if what == "gamma" else lg.reward
            series.append(y[m])
        if not series:
            return None
        n = min(len(s) for s in series)
        Y = np.array([s[:n] for s in series])
        return Y.mean(axis=0), np.percentile(Y, 15, axis=0), np.percentile(Y, 85, axis=0)


def aggregate(value, logs, axis):
    summaries = [lg.summary() for lg in logs]
    row = {axis: value, "n_runs": len(summaries)}
    if not summaries:
        return row
    for key in summaries[0]:
        if key == "seed":
            continue
        m, h = ci95([s[key] for s in summaries])
        row[f"{key}_mean"] = m
        row[f"{key}_ci95"] = h
    return row


def sweep(spec, axis, values, jobs=1):
    """Run ``values x seeds`` and aggregate per value (mean and 95% CI)."""
    values = list(values)
    specs = [apply_axis(spec, axis, v) for v in values]
    for s in specs:
        s.validate()
    logs = {v: [] for v in values}
    failures = []
    if axis == "alpha":
        results = _map(_alpha_cell, [(spec, seed, values) for seed in spec.seeds], jobs)
        for seed, (cell, err) in zip(spec.seeds, results):
            if err is not None:
                failures += [(v, seed, err) for v in values]
                continue
            for v, lg in zip(values, cell):
                logs[v].append(lg)
    else:
        args = [(s, seed) for s in specs for seed in spec.seeds]
        results = _map(run_seed, args, jobs)
        for (s, seed), v, (lg, err) in zip(args, [v for v in values for _ in spec.seeds],
                                           results):
            if err is not None:
                failures.append((v, seed, err))
            else:
                logs[v].append(lg)
    table = [aggregate(v, logs[v], axis) for v in values]
    return SweepResult(axis, values, logs, failures, table)


def write_table(rows, path):
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow(r)


# -- latency ------------------------------------------------------------

def latency_bench(agent, n_trials=10_000, context=None, warmup=100):
    """Wall-clock statistics (ms) of one deterministic action selection."""
    if context is None:
        context = np.full(agent.context_dim, 0.5)
    n_trials = int(n_trials)
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    for _ in range(warmup):
        agent.select_action(context)
    times = np.empty(n_trials)
    clock = time.perf_counter_ns
    for i in range(n_trials):
        t0 = clock()
        agent.select_action(context)
        times[i] = clock() - t0
    times /= 1e6
    return {"mean_ms": float(times.mean()), "std_ms": float(times.std()),
            "n_trials": n_trials}


__all__ = [
    "Constraint", "ExperimentSpec", "RunLog", "Runner", "SWEEP_AXES", "SweepResult",
    "accumulated_violation", "aggregate", "apply_axis", "ci95", "latency_bench",
    "mean_unreliability", "run", "run_seed", "step_violation", "sweep", "write_table",
]
