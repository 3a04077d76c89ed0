"""SVG charts for run logs and sweep tables.

Curves show the mean across seeds with a 15th-85th percentile band; bar
charts show per-value means with 95% confidence whiskers.
"""
import numpy as np
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

BAND = (15, 85)
YLABELS = {"gamma": "accumulated violation", "reward": "reward"}


def _series(logs, what, phase):
    out = []
    for lg in logs:
        m = lg.phase == phase
        y = lg.gamma if what == "gamma" else lg.reward
        out.append(np.asarray(y)[m])
    return out


def band(series):
    """Mean and percentile band of equal-length (truncated) series."""
    n = min(len(s) for s in series)
    Y = np.array([s[:n] for s in series])
    return Y.mean(axis=0), np.percentile(Y, BAND[0], axis=0), np.percentile(Y, BAND[1], axis=0)


def _save(fig, path):
    FigureCanvasSVG(fig)
    fig.savefig(path, format="svg")
    return path


def curve_chart(groups, path, what="gamma", phase="train", title=None):
    """One line per group; ``groups`` maps a label to a list of :class:`RunLog`."""
    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.add_subplot()
    for label, logs in groups.items():
        series = [s for s in _series(logs, what, phase) if len(s)]
        if not series:
            continue
        mean, lo, hi = band(series)
        t = np.arange(1, len(mean) + 1)
        line, = ax.plot(t, mean, lw=1.4, label=str(label))
        ax.fill_between(t, lo, hi, color=line.get_color(), alpha=0.2, lw=0)
    ax.set_xlabel("step")
    ax.set_ylabel(YLABELS.get(what, what))
    if title:
        ax.set_title(title)
    if ax.lines:
        ax.legend(frameon=False, fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def bar_chart(rows, axis, metric, path, title=None):
    """Bars of ``<metric>_mean`` per sweep value with ``<metric>_ci95`` whiskers."""
    labels = [str(r[axis]) for r in rows]
    mean = np.array([r.get(f"{metric}_mean", np.nan) for r in rows], dtype=float)
    err = np.array([r.get(f"{metric}_ci95", 0.0) for r in rows], dtype=float)
    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.add_subplot()
    x = np.arange(len(rows))
    ax.bar(x, mean, yerr=err, capsize=4, color="#4c72b0", ecolor="black")
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_xlabel(axis)
    ax.set_ylabel(metric.replace("_", " "))
    if title:
        ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def sweep_charts(result, out_dir):
    """The standard chart set for a sweep; returns the written paths."""
    paths = []
    groups = {f"{result.axis}={v}": result.logs[v] for v in result.values if result.logs[v]}
    for what in ("gamma", "reward"):
        paths.append(curve_chart(groups, out_dir / f"{what}_train.svg", what, "train"))
    metrics = ["infer_mean_violation", "infer_mean_reward"]
    if any("infer_mean_unreliability_mean" in r for r in result.table):
        metrics += ["infer_mean_unreliability", "infer_mean_energy"]
    rows = [r for r in result.table if r.get("n_runs")]
    if rows:
        for metric in metrics:
            paths.append(bar_chart(rows, result.axis, metric, out_dir / f"{metric}.svg"))
    return paths
