"""JSON experiment configs: schema, overrides and conversion to an ExperimentSpec.

A config has up to six sections::

    {"env": {...}, "agent": {...}, "risk": {...},
     "experiment": {...}, "sweep": {...}, "output": {...}}

Only ``env.kind`` is required; everything else falls back to the library
defaults.  Unknown keys are rejected so that typos fail loudly.
"""
import copy
import json

import jsonschema

from .agents import AGENT_KINDS, AgentConfig
from .envs import ENV_KINDS
from .errors import ConfigError
from .harness import SWEEP_AXES, ExperimentSpec

_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_posint = {"type": "integer", "minimum": 1}
_level = {"type": "number", "exclusiveMinimum": 0, "maximum": 1}


def _section(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = _section({
    "env": _section({
        "kind": {"enum": list(ENV_KINDS)},
        "sigma_env": _nonneg,
        "dim": _posint,
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        # simulator parameters are checked field by field by RanConfig
        "ran": {"type": "object"},
    }, required=["kind"]),
    "agent": _section({
        "kind": {"enum": list(AGENT_KINDS)},
        "lambda": _pos,
        "batch_size": _posint,
        "kappa": _pos,
        "actor_lr": _pos,
        "critic_lr": _pos,
        "buffer_capacity": _posint,
        "hidden": {"type": "array", "items": _posint, "minItems": 1},
        "reward_quantiles": _posint,
        "noise_theta": _nonneg,
        "noise_sigma": _nonneg,
    }),
    "risk": _section({
        "quantiles": {"type": "array", "items": _level, "minItems": 1},
        "alpha": _level,
        "train_alphas": {"type": "array", "items": _level, "minItems": 1},
        "infer_alpha": _level,
    }),
    "experiment": _section({
        "t_train": {"type": "integer", "minimum": 0},
        "t_infer": {"type": "integer", "minimum": 0},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
    }),
    "sweep": _section({
        "axis": {"enum": list(SWEEP_AXES)},
        "values": {"type": "array", "items": {"type": "number"}, "minItems": 1},
    }),
    "output": _section({
        "dir": {"type": "string", "minLength": 1},
        "charts": {"type": "boolean"},
        "checkpoint": {"type": "boolean"},
    }),
})
SCHEMA["required"] = ["env"]

SEED_SPLIT = ("numpy.random.SeedSequence(seed).spawn(4) -> streams "
              "[env, noise, init, replay] in that order")

_AGENT_KEYS = {"lambda": "lam"}
_RISK_KEYS = {"quantiles": "constraint_quantiles", "alpha": "alpha",
              "train_alphas": "train_alphas"}


def _where(error):
    path = ".".join(str(p) for p in error.absolute_path)
    return path or "<root>"


def validate(cfg):
    """Raise :class:`ConfigError` naming the offending field."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if not errors:
        return cfg
    lines = []
    for e in errors:
        if e.validator == "required":
            missing = e.message.split("'")[1]
            field = f"{_where(e)}.{missing}" if e.absolute_path else missing
            lines.append(f"{field}: required field is missing")
        else:
            lines.append(f"{_where(e)}: {e.message}")
    raise ConfigError("invalid config:\n  " + "\n  ".join(lines))


def parse(text, source="<config>"):
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    return cfg


def load(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse(text, str(path))


def apply_overrides(cfg, overrides):
    """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.strip().split(".")
        node = cfg
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key}: {p} is not a section")
        node[parts[-1]] = value
    return cfg


def to_spec(cfg, seeds=None):
    """Validated config -> :class:`ExperimentSpec` (seeds argument wins over the file)."""
    validate(cfg)
    env = dict(cfg["env"])
    agent_kw = {_AGENT_KEYS.get(k, k): v for k, v in cfg.get("agent", {}).items()}
    risk = cfg.get("risk", {})
    agent_kw.update({_RISK_KEYS[k]: v for k, v in risk.items() if k in _RISK_KEYS})
    exp = cfg.get("experiment", {})
    if seeds is None:
        seeds = exp.get("seeds", [0])
    spec = ExperimentSpec(env=env, agent=AgentConfig(**agent_kw), t_train=exp.get("t_train"),
                          t_infer=exp.get("t_infer", 500), seeds=tuple(seeds),
                          infer_alpha=risk.get("infer_alpha"))
    spec.validate()
    return spec


def effective(cfg, spec):
    """What actually ran: the merged config, the resolved spec and the seed rule."""
    return {"config": cfg, "resolved": spec.to_dict(), "rng": {"split": SEED_SPLIT,
                                                              "seeds": list(spec.seeds)}}
