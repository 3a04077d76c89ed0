"""Transport-block offloading simulator for a CPU/accelerator baseband pool.

Every decision period spans ``ttis_per_period`` TTIs.  Users emit transport
blocks (TBs) each TTI; every TB is routed by a size threshold to either the
CPU pool or the hardware accelerator (HA), each of which is a FIFO queue in
front of one or more identical servers.  A TB that is not decoded within
``p_max_ms`` of its arrival is lost; if it was already in service the
energy spent on it up to the deadline is still charged.

The action is the normalised bit threshold: a TB goes to the HA iff its
size exceeds ``threshold * max_bits``.  The agent's reward is the period
energy negated and divided by ``energy_scale``; the single constraint is
the fraction of TBs decoded in time, bounded from below by ``1 - epsilon``.
"""
import csv
from dataclasses import dataclass, field, fields, replace

import numpy as np

from ..constraints import Constraint
from ..errors import ConfigError
from .base import Env

MCS_LEVELS = 28


@dataclass(frozen=True)
class UnitModel:
    """Service-time and energy model of one processing unit.

    Service time (ms) is ``base_ms + size / bits_per_ms * effort`` with
    ``effort = 1 + snr_slope * (poor-signal fraction)``, times a lognormal
    jitter ``exp(jitter * z)``.  A TB busy for ``d`` ms costs
    ``per_tb_j + busy_w * d / 1000`` joules.
    """

    servers: int
    base_ms: float
    bits_per_ms: float
    snr_slope: float
    jitter: float
    busy_w: float
    per_tb_j: float
    idle_w: float

    def service_ms(self, size, snr, z, snr_lo, snr_hi):
        poor = np.clip((snr_hi - snr) / (snr_hi - snr_lo), 0.0, 1.0)
        effort = 1.0 + self.snr_slope * poor
        return (self.base_ms + size / self.bits_per_ms * effort) * np.exp(self.jitter * z)


CPU_DEFAULT = UnitModel(servers=2, base_ms=0.05, bits_per_ms=40_000.0, snr_slope=0.6,
                        jitter=0.25, busy_w=12.0, per_tb_j=0.0, idle_w=8.0)
HA_DEFAULT = UnitModel(servers=1, base_ms=0.02, bits_per_ms=600_000.0, snr_slope=0.3,
                       jitter=0.15, busy_w=180.0, per_tb_j=2e-3, idle_w=15.0)


@dataclass(frozen=True)
class RanConfig:
    n_users: int = 6
    ttis_per_period: int = 100
    tti_ms: float = 1.0
    p_max_ms: float = 2.0
    activity: tuple = (0.3, 0.7)
    snr_db: tuple = (0.0, 30.0)
    snr_jitter_db: float = 2.0
    size_base_bits: float = 1500.0
    size_per_mcs_bits: float = 1200.0
    size_sigma: float = 0.6
    min_bits: float = 100.0
    max_bits: float = 60_000.0
    cpu: UnitModel = CPU_DEFAULT
    ha: UnitModel = HA_DEFAULT
    epsilon: float = 0.05
    hist_bins: int = 5
    energy_scale: float = 1.5
    trace_file: str = None

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.p_max_ms <= 0 or self.tti_ms <= 0 or self.energy_scale <= 0:
            raise ConfigError("p_max_ms, tti_ms and energy_scale must be positive")
        if self.n_users < 0 or self.ttis_per_period < 1 or self.hist_bins < 1:
            raise ConfigError("n_users, ttis_per_period and hist_bins out of range")
        if self.snr_db[1] <= self.snr_db[0]:
            raise ConfigError("snr_db must be an increasing (low, high) pair")

    @property
    def snr_range(self):
        lo, hi = self.snr_db
        pad = 3.0 * self.snr_jitter_db
        return lo - pad, hi + pad

    @property
    def period_s(self):
        return self.ttis_per_period * self.tti_ms / 1000.0

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown RAN parameters: {sorted(unknown)}")
        for unit in ("cpu", "ha"):
            if unit in d and isinstance(d[unit], dict):
                base = CPU_DEFAULT if unit == "cpu" else HA_DEFAULT
                bad = set(d[unit]) - {f.name for f in fields(UnitModel)}
                if bad:
                    raise ConfigError(f"unknown {unit} parameters: {sorted(bad)}")
                d[unit] = replace(base, **d[unit])
        for key in ("activity", "snr_db"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class PeriodResult:
    energy: float
    reliability: float
    generated: int
    decoded: int
    dropped_queue: int
    dropped_service: int
    to_ha: int
    energy_cpu: float = 0.0
    energy_ha: float = 0.0
    idle_energy: float = 0.0
    late: int = field(init=False)

    def __post_init__(self):
        self.late = self.dropped_queue + self.dropped_service


def _run_fifo(arrivals, service, unit, p_max):
    """Serve TBs in arrival order; returns (decoded, dropped_q, dropped_s, energy)."""
    free = [0.0] * unit.servers
    decoded = dropped_q = dropped_s = 0
    busy_ms = 0.0
    n_served = 0
    for arr, svc in zip(arrivals, service):
        k = min(range(len(free)), key=free.__getitem__)
        start = arr if arr > free[k] else free[k]
        deadline = arr + p_max
        if start >= deadline:
            dropped_q += 1
            continue
        end = start + svc
        n_served += 1
        if end <= deadline:
            decoded += 1
            busy_ms += svc
            free[k] = end
        else:
            dropped_s += 1
            busy_ms += deadline - start
            free[k] = deadline
    energy = n_served * unit.per_tb_j + unit.busy_w * busy_ms / 1000.0
    return decoded, dropped_q, dropped_s, energy


def _truncated_lognormal(median, sigma, lo, hi, rng, max_rounds=64):
    """Lognormal sizes restricted to [lo, hi] by redrawing out-of-range entries."""
    size = median * np.exp(sigma * rng.standard_normal(median.shape))
    for _ in range(max_rounds):
        bad = np.flatnonzero((size < lo) | (size > hi))
        if bad.size == 0:
            return size
        size[bad] = median[bad] * np.exp(sigma * rng.standard_normal(bad.size))
    # only reachable with a median far outside the window
    return np.clip(size, lo, hi)


def simulate_period(tti, size, service_cpu, service_ha, threshold, cfg):
    """Route and serve one period's TBs; all TBs are resolved before returning.

    ``tti`` holds each TB's TTI index within the period, sorted ascending;
    ``service_cpu``/``service_ha`` are the service times (ms) the TB would
    need on each unit.
    """
    tti = np.asarray(tti)
    size = np.asarray(size, dtype=np.float64)
    arrivals = tti * cfg.tti_ms
    to_ha = size > threshold * cfg.max_bits
    idle = (cfg.cpu.idle_w + cfg.ha.idle_w) * cfg.period_s
    res_c = _run_fifo(arrivals[~to_ha].tolist(), np.asarray(service_cpu)[~to_ha].tolist(),
                      cfg.cpu, cfg.p_max_ms)
    res_h = _run_fifo(arrivals[to_ha].tolist(), np.asarray(service_ha)[to_ha].tolist(),
                      cfg.ha, cfg.p_max_ms)
    n = int(size.size)
    decoded = res_c[0] + res_h[0]
    return PeriodResult(
        energy=idle + res_c[3] + res_h[3],
        reliability=decoded / n if n else 1.0,
        generated=n,
        decoded=decoded,
        dropped_queue=res_c[1] + res_h[1],
        dropped_service=res_c[2] + res_h[2],
        to_ha=int(to_ha.sum()),
        energy_cpu=res_c[3],
        energy_ha=res_h[3],
        idle_energy=idle,
    )


def context_histogram(snr, mcs, size, cfg):
    """Normalised (snr, mcs, size) histogram flattened to ``hist_bins**3`` cells."""
    D = cfg.hist_bins
    snr = np.asarray(snr, dtype=np.float64)
    if snr.size == 0:
        return np.zeros(D ** 3)
    lo, hi = cfg.snr_range
    bounds = [(lo, hi), (0.0, float(MCS_LEVELS)), (0.0, cfg.max_bits)]
    cols = []
    for v, (a, b) in zip((snr, np.asarray(mcs, dtype=np.float64), np.asarray(size, dtype=np.float64)),
                         bounds):
        idx = np.floor((v - a) / (b - a) * D).astype(int)
        cols.append(np.clip(idx, 0, D - 1))
    flat = np.ravel_multi_index(cols, (D, D, D))
    counts = np.bincount(flat, minlength=D ** 3).astype(np.float64)
    return counts / counts.sum()


def load_trace(path):
    """Read ``tti_index, size_bits, snr_db, mcs_index`` rows; a header line is allowed."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or not "".join(rec).strip() or rec[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(x) for x in rec[:4]])
            except ValueError:
                if rows:
                    raise ConfigError(f"{path}:{lineno}: malformed trace row {rec!r}")
                continue  # header
            if len(rec) < 4:
                raise ConfigError(f"{path}:{lineno}: expected 4 fields, got {len(rec)}")
    if not rows:
        raise ConfigError(f"{path}: trace contains no transport blocks")
    arr = np.asarray(rows)
    order = np.argsort(arr[:, 0], kind="stable")
    return arr[order]


class RanOffloadingEnv(Env):
    """CPU/HA offloading decisions every period, context = TB feature histogram."""

    action_dim = 1

    def __init__(self, config=None, **overrides):
        if config is None:
            config = RanConfig.from_dict(overrides)
        elif overrides:
            config = replace(config, **overrides)
        self.cfg = config
        self.context_dim = config.hist_bins ** 3
        self.action_low = np.array([0.0])
        self.action_high = np.array([1.0])
        self.constraints = (Constraint(1.0 - config.epsilon, "lower"),)
        self.trace = load_trace(config.trace_file) if config.trace_file else None
        self.period = 0
        self.last = None

    # -- traffic --------------------------------------------------------
    def _generate(self):
        cfg, rng = self.cfg, self.rng
        if self.trace is not None:
            return self._from_trace()
        T, U = cfg.ttis_per_period, cfg.n_users
        lo, hi = cfg.snr_db
        p = rng.uniform(*cfg.activity, size=U)
        mean_snr = rng.uniform(lo, hi, size=U)
        active = rng.random((T, U)) < p
        tti, user = np.nonzero(active)
        n = tti.size
        slo, shi = cfg.snr_range
        snr = np.clip(mean_snr[user] + cfg.snr_jitter_db * rng.standard_normal(n), slo, shi)
        mcs = np.rint((snr - lo) / (hi - lo) * (MCS_LEVELS - 1) + rng.standard_normal(n))
        mcs = np.clip(mcs, 0, MCS_LEVELS - 1)
        median = cfg.size_base_bits + cfg.size_per_mcs_bits * mcs
        size = _truncated_lognormal(median, cfg.size_sigma, cfg.min_bits, cfg.max_bits, rng)
        return tti, size, snr, mcs

    def _from_trace(self):
        T = self.cfg.ttis_per_period
        tr = self.trace
        span = int(tr[-1, 0]) // T + 1
        k = self.period % span
        rows = tr[(tr[:, 0] >= k * T) & (tr[:, 0] < (k + 1) * T)]
        return rows[:, 0].astype(int) - k * T, rows[:, 1], rows[:, 2], rows[:, 3]

    def _draw_context(self):
        tti, size, snr, mcs = self._generate()
        n = size.size
        z = self.rng.standard_normal((2, n))
        self.pending = {"tti": tti, "size": size, "snr": snr, "mcs": mcs,
                        "z_cpu": z[0], "z_ha": z[1]}
        return context_histogram(snr, mcs, size, self.cfg)

    def _evaluate(self, s, a):
        cfg = self.cfg
        p = self.pending
        lo, hi = cfg.snr_db
        svc_c = cfg.cpu.service_ms(p["size"], p["snr"], p["z_cpu"], lo, hi)
        svc_h = cfg.ha.service_ms(p["size"], p["snr"], p["z_ha"], lo, hi)
        threshold = float(np.clip(a[0], 0.0, 1.0))
        res = simulate_period(p["tti"], p["size"], svc_c, svc_h, threshold, cfg)
        self.last = res
        self.period += 1
        return -res.energy / cfg.energy_scale, (res.reliability,), {"energy": res.energy,
                                                                    "period": res}

    def get_state(self):
        meta, arrays = super().get_state()
        meta["period"] = self.period
        arrays.update({f"pending_{k}": v for k, v in self.pending.items()})
        return meta, arrays

    def set_state(self, meta, arrays):
        super().set_state(meta, arrays)
        self.period = int(meta["period"])
        self.pending = {k[len("pending_"):]: np.asarray(v) for k, v in arrays.items()
                        if k.startswith("pending_")}
