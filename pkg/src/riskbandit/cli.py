"""Command-line entry point: ``riskbandit {train,eval,sweep,bench}``.

Exit codes: 0 success, 2 configuration error, 3 runtime error (numeric
failure, corrupted checkpoint, ...).
"""
import argparse
import json
import logging
import math
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__, checkpoint
from . import config as cfgmod
from .errors import CheckpointError, ConfigError
from .harness import Runner, apply_axis, ci95, latency_bench, sweep, write_table

log = logging.getLogger("riskbandit")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def parse_seeds(text):
    """``"3"``, ``"0,2,5"`` or ``"0-9"`` (inclusive) -> list of ints."""
    seeds = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = part.split("-")
                seeds.extend(range(int(lo), int(hi) + 1))
            elif part:
                seeds.append(int(part))
    except ValueError:
        raise ConfigError(f"--seeds: cannot parse {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise ConfigError(f"--seeds: need non-negative seeds, got {text!r}")
    return seeds


def parse_values(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values: cannot parse {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="riskbandit",
                                description="Risk-aware constrained contextual bandits.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON config file")
        sp.add_argument("--seed", type=int, help="run a single seed")
        sp.add_argument("--seeds", help="seed list: '0,1,2' or '0-9'")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a config field, e.g. agent.lambda=5.0 (repeatable)")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="concurrent runs (default 1)")
        sp.add_argument("--force", action="store_true",
                        help="overwrite a non-empty output directory")
        sp.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    sp = sub.add_parser("train", help="train then run inference for every seed")
    common(sp)
    sp = sub.add_parser("eval", help="inference only, from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", type=Path, required=True, help="checkpoint written by train")
    sp.add_argument("--alpha", type=float, help="risk level for inference")
    sp = sub.add_parser("sweep", help="sweep one parameter over values x seeds")
    common(sp)
    sp.add_argument("--axis", help="one of sigma_env, alpha, lambda, epsilon, dim")
    sp.add_argument("--values", help="comma-separated values")
    sp = sub.add_parser("bench", help="time deterministic action selection")
    common(sp)
    sp.add_argument("--checkpoint", type=Path, help="optional trained checkpoint")
    sp.add_argument("--trials", type=int, default=10_000, help="timed calls (default 10000)")
    return p


# -- helpers --------------------------------------------------------------

def _load_config(args):
    cfg = cfgmod.load(args.config) if args.config else {}
    return cfgmod.apply_overrides(cfg, args.override)


def _seeds(args):
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        return [args.seed]
    if args.seeds:
        return parse_seeds(args.seeds)
    return None


def _prepare_out(args, cfg, default):
    out = args.out or Path(cfg.get("output", {}).get("dir", default))
    if out.exists() and not out.is_dir():
        raise ConfigError(f"output path {out} exists and is not a directory")
    if out.exists() and any(out.iterdir()):
        if not args.force:
            raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_shapes(agent, arrays):
    for i, net in enumerate(agent.networks()):
        for j, p in enumerate(net.params):
            src = arrays.get(f"net{i}_p{j}")
            if src is None or src.shape != p.shape:
                got = None if src is None else src.shape
                raise ConfigError(f"checkpoint network {i} layer {j // 2} has shape {got}, "
                                  f"config builds {p.shape} (check agent.hidden)")


def _finite(obj):
    # strict JSON has no NaN/Infinity
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_finite(obj), fh, indent=2, sort_keys=True, default=_jsonable,
                  allow_nan=False)
        fh.write("\n")


def _jsonable(x):
    if hasattr(x, "tolist"):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _aggregate(summaries):
    out = {}
    for key in summaries[0]:
        if key == "seed":
            continue
        m, h = ci95([s[key] for s in summaries])
        out[key] = {"mean": m, "ci95": h}
    return out


def _charts_enabled(cfg):
    return cfg.get("output", {}).get("charts", True)


# -- commands -------------------------------------------------------------

def _train_seed(spec, seed, ckpt):
    runner = Runner(spec, seed)
    runner.train(spec.t_train)
    if ckpt is not None:
        runner.save(ckpt)
    runner.infer(spec.t_infer)
    return runner.log()


def cmd_train(args):
    cfg = _load_config(args)
    spec = cfgmod.to_spec(cfg, _seeds(args))
    out = _prepare_out(args, cfg, "runs/train")
    _write_json(out / "effective_config.json", cfgmod.effective(cfg, spec))
    want_ckpt = cfg.get("output", {}).get("checkpoint", True)
    jobs = [(spec, seed, out / f"checkpoint_seed{seed}.npz" if want_ckpt else None)
            for seed in spec.seeds]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            logs = [f.result() for f in [ex.submit(_train_seed, *j) for j in jobs]]
    else:
        logs = [_train_seed(*j) for j in jobs]
    for lg in logs:
        lg.to_csv(out / f"run_seed{lg.seed}.csv")
    summaries = [lg.summary() for lg in logs]
    summary = {"command": "train", "lambda": spec.agent.lam, "agent": spec.agent.kind,
               "env": spec.env, "seeds": list(spec.seeds), "runs": summaries,
               "aggregate": _aggregate(summaries)}
    _write_json(out / "summary.json", summary)
    if _charts_enabled(cfg):
        from .plotting import curve_chart
        label = spec.agent.kind
        curve_chart({label: logs}, out / "gamma_train.svg", "gamma", "train")
        curve_chart({label: logs}, out / "reward_train.svg", "reward", "train")
    _print_summary(summary["aggregate"])
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval(args):
    cfg = _load_config(args)
    spec = cfgmod.to_spec(cfg, _seeds(args))
    meta, arrays = checkpoint.load(args.checkpoint)
    ameta = meta.get("agent", {})
    alpha = args.alpha if args.alpha is not None else spec.infer_alpha
    out = _prepare_out(args, cfg, "runs/eval")
    runs = []
    for seed in spec.seeds:
        runner = Runner(spec, seed)
        agent = runner.agent
        dims = [agent.context_dim, agent.action_dim, agent.M]
        if ameta.get("kind") != agent.kind or list(ameta.get("dims", [])) != dims:
            raise ConfigError(f"checkpoint holds a {ameta.get('kind')} agent with dims "
                              f"{ameta.get('dims')}; config builds {agent.kind} with {dims}")
        _check_shapes(agent, arrays)
        if alpha is not None and agent.risk is not None:
            agent.risk.alpha_vector(alpha)
        checkpoint.restore_agent(agent, ameta, arrays)
        runner.infer(spec.t_infer, alpha)
        lg = runner.log()
        lg.to_csv(out / f"eval_seed{seed}.csv")
        runs.append(lg.summary())
    summary = {"command": "eval", "checkpoint": str(args.checkpoint), "alpha": alpha,
               "agent": spec.agent.kind, "seeds": list(spec.seeds), "runs": runs,
               "aggregate": _aggregate(runs)}
    _write_json(out / "effective_config.json", cfgmod.effective(cfg, spec))
    _write_json(out / "summary.json", summary)
    _print_summary(summary["aggregate"])
    print(f"wrote {out}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = _load_config(args)
    sw = cfg.get("sweep", {})
    axis = args.axis or sw.get("axis")
    values = parse_values(args.values) if args.values else sw.get("values")
    if axis is None or not values:
        raise ConfigError("sweep needs an axis and values (--axis/--values or sweep section)")
    cfg = cfgmod.apply_overrides(cfg, [f"sweep.axis={json.dumps(axis)}",
                                       f"sweep.values={json.dumps(values)}"])
    spec = cfgmod.to_spec(cfg, _seeds(args))
    for v in values:  # reject bad values before any run
        s = apply_axis(spec, axis, v)
        s.validate()
    out = _prepare_out(args, cfg, "runs/sweep")
    _write_json(out / "effective_config.json", cfgmod.effective(cfg, spec))
    result = sweep(spec, axis, values, jobs=args.jobs)
    write_table(result.table, out / "sweep_table.csv")
    runs_dir = out / "runs"
    runs_dir.mkdir()
    for v in values:
        for lg in result.logs[v]:
            lg.to_csv(runs_dir / f"{axis}={v}_seed{lg.seed}.csv")
    _write_json(out / "summary.json", {"command": "sweep", "axis": axis, "values": values,
                                       "table": result.table,
                                       "failures": [list(f) for f in result.failures]})
    if _charts_enabled(cfg):
        from .plotting import sweep_charts
        sweep_charts(result, out)
    for f in result.failures:
        log.error("run %s=%s seed %s failed: %s", axis, *f)
    print(f"wrote {out} ({len(values)} values, {len(result.failures)} failed runs)")
    return EXIT_RUNTIME if result.failures and not any(result.logs.values()) else EXIT_OK


def cmd_bench(args):
    cfg = _load_config(args)
    spec = cfgmod.to_spec(cfg, _seeds(args))
    runner = Runner(spec, spec.seeds[0])
    if args.checkpoint:
        meta, arrays = checkpoint.load(args.checkpoint)
        _check_shapes(runner.agent, arrays)
        checkpoint.restore_agent(runner.agent, meta["agent"], arrays)
    if args.trials < 1:
        raise ConfigError("--trials must be at least 1")
    stats = latency_bench(runner.agent, args.trials, context=runner.s)
    out = _prepare_out(args, cfg, "runs/bench")
    stats.update({"agent": spec.agent.kind, "hidden": list(spec.agent.hidden)})
    _write_json(out / "bench.json", stats)
    print(f"select_action: {stats['mean_ms']:.4f} +- {stats['std_ms']:.4f} ms "
          f"over {stats['n_trials']} trials")
    return EXIT_OK


def _print_summary(agg):
    for key, v in agg.items():
        print(f"{key:32s} {v['mean']:.6g} +- {v['ci95']:.3g}")


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "bench": cmd_bench}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc.filename}: file not found", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
