from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from oracles import fifo_trace
from riskbandit.envs import (PolynomialEnv, RanConfig, RanOffloadingEnv, SyntheticQuadraticEnv,
                             UnitModel, context_histogram, load_trace, make_env,
                             polynomial_step, simulate_period, synthetic_step)
from riskbandit.errors import ConfigError


# -- synthetic ---------------------------------------------------------------

def test_synthetic_zero_action():
    assert synthetic_step((1.0, 1.0, 0.0), 0.0, 0.0) == (0.0, 0.0, 0.0)


def test_synthetic_hand_values():
    r, c1, c2 = synthetic_step((1.0, 1.0, 0.5), 1.0, 0.0)
    assert r == 2.0 and c1 == 0.0 and c2 == -0.25


def test_synthetic_noise_mean():
    rng = np.random.default_rng(0)
    s, a, sigma, n = (0.3, 0.8, 0.1), 1.3, 0.2, 100_000
    rs = np.array([synthetic_step(s, a, sigma, rng)[0] for _ in range(n)])
    exact = 0.3 * a * a + 0.8 * a
    assert abs(rs.mean() - exact) < 4 * sigma / np.sqrt(n)


def _feasible(tau, which=(1, 2), s=(0.7, 0.7, 0.7), sigma=0.15):
    a = np.arange(-2.0, 2.0 + 5e-4, 1e-3)
    q = stats.norm.ppf(tau) * sigma
    c = {1: s[0] * a ** 2 - s[1] * a + q,
         2: s[0] * (a - s[2]) ** 2 - s[1] * (a - s[2]) + q}
    ok = np.all([c[m] <= 0.3 for m in which], axis=0)
    return set(np.round(a[ok], 6).tolist())


def test_synthetic_feasible_sets_nest():
    lo, mid, hi = _feasible(0.841), _feasible(0.977), _feasible(0.999)
    # jointly, the 3-sigma set is empty at this context
    assert not hi and hi < mid < lo
    assert min(mid) > min(lo) and max(mid) < max(lo)
    for m in (1, 2):
        lo, mid, hi = (_feasible(t, (m,)) for t in (0.841, 0.977, 0.999))
        assert hi and hi < mid < lo


def test_synthetic_env_interface():
    env = SyntheticQuadraticEnv(sigma_env=0.0)
    s = env.reset(3)
    assert s.shape == (3,) and np.all((0 <= s) & (s <= 1))
    out = env.step([1.0])
    assert np.allclose([out.reward, *out.constraints], synthetic_step(s, 1.0, 0.0))
    assert env.M == 2 and env.constraints[0].bound == 0.3
    with pytest.raises(ValueError):
        env.step([1.0, 2.0])


# -- polynomial --------------------------------------------------------------

def test_polynomial_zero_action_is_noise_only():
    rng = np.random.default_rng(0)
    rs = [polynomial_step(np.ones(3), np.zeros(3), 0.2, rng)[0] for _ in range(20_000)]
    assert abs(np.mean(rs)) < 4 * 0.2 / np.sqrt(20_000)
    assert polynomial_step(np.ones(3), np.zeros(3), 0.0) == (0.0, 0.0)


def test_polynomial_hand_values():
    assert polynomial_step([1.0, 1.0], [1.0, 1.0], 0.0) == (2.0, 0.0)
    assert polynomial_step([1.0, 0.0, 1.0], [2.0, 7.0, 1.0], 0.0) == (3.0, -3.0)


def test_polynomial_dimension_mismatch():
    with pytest.raises(ValueError):
        polynomial_step([1.0, 1.0], [1.0, 1.0, 1.0], 0.0)
    env = PolynomialEnv(dim=3)
    env.reset(0)
    with pytest.raises(ValueError):
        env.step([0.1, 0.2])


# -- RAN ---------------------------------------------------------------------

def hand_cfg(servers=1, **kw):
    cpu = UnitModel(servers=servers, base_ms=0.0, bits_per_ms=1.0, snr_slope=0.0, jitter=0.0,
                    busy_w=10.0, per_tb_j=1e-3, idle_w=1.0)
    ha = UnitModel(servers=1, base_ms=0.0, bits_per_ms=1.0, snr_slope=0.0, jitter=0.0,
                   busy_w=100.0, per_tb_j=2e-3, idle_w=4.0)
    return RanConfig(cpu=cpu, ha=ha, **kw)


def test_zero_traffic_period():
    cfg = hand_cfg()
    res = simulate_period([], [], [], [], 0.5, cfg)
    assert res.reliability == 1.0 and res.generated == 0
    assert res.energy == pytest.approx((1.0 + 4.0) * 0.1, abs=1e-15)
    env = RanOffloadingEnv(n_users=0)
    env.reset(0)
    out = env.step([0.3])
    assert out.constraints[0] == 1.0
    assert out.info["energy"] == pytest.approx((8.0 + 15.0) * 0.1)
    assert np.all(out.context == 0)


def test_routing_boundaries():
    cfg = hand_cfg()
    size = [100.0, 30_000.0, 60_000.0]
    zeros = [0.1, 0.1, 0.1]
    assert simulate_period([0, 10, 20], size, zeros, zeros, 0.0, cfg).to_ha == 3
    assert simulate_period([0, 10, 20], size, zeros, zeros, 1.0, cfg).to_ha == 0
    assert simulate_period([0, 10, 20], size, zeros, zeros, 0.5, cfg).to_ha == 1
    assert simulate_period([0, 10, 20], size, zeros, zeros, 0.49, cfg).to_ha == 2


def test_three_tb_hand_trace():
    # CPU only: TB0 occupies [0, 1.5], TB1 starts at 1.5 and is cut at its 2 ms
    # deadline, TB2 (arrives at 1) starts at 2 and finishes at 2.5 < 3.
    cfg = hand_cfg()
    tti, svc = [0, 0, 1], [1.5, 1.0, 0.5]
    res = simulate_period(tti, [500.0, 600.0, 700.0], svc, [9.0] * 3, 1.0, cfg)
    outcome, busy = fifo_trace([0.0, 0.0, 1.0], svc, 2.0)
    assert outcome == ["ok", "service", "ok"]
    assert busy == [1.5, 0.5, 0.5]
    assert res.decoded == 2 and res.dropped_service == 1 and res.dropped_queue == 0
    assert res.reliability == 2 / 3
    expected = (1.0 + 4.0) * 0.1 + 3 * 1e-3 + 10.0 * 2.5 / 1000.0
    assert res.energy == pytest.approx(expected, abs=1e-15)


def test_queue_drop_costs_nothing():
    cfg = hand_cfg()
    outcome, busy = fifo_trace([0.0, 0.0, 0.0], [2.0, 1.0, 1.0], 2.0)
    res = simulate_period([0, 0, 0], [1.0] * 3, [2.0, 1.0, 1.0], [0.0] * 3, 1.0, cfg)
    assert outcome == ["ok", "queue", "queue"]
    assert res.dropped_queue == 2 and res.decoded == 1
    assert res.energy_cpu == pytest.approx(1e-3 + 10.0 * sum(busy) / 1000.0)


def test_single_server_fifo_matches_oracle_on_random_traces():
    rng = np.random.default_rng(0)
    cfg = hand_cfg()
    for _ in range(200):
        n = int(rng.integers(0, 30))
        tti = np.sort(rng.integers(0, 20, size=n))
        svc = rng.exponential(0.8, size=n)
        res = simulate_period(tti, np.ones(n), svc, np.zeros(n), 1.0, cfg)
        outcome, busy = fifo_trace(tti.astype(float), svc, 2.0)
        assert res.decoded == outcome.count("ok")
        assert res.dropped_queue == outcome.count("queue")
        served = n - outcome.count("queue")
        assert res.energy_cpu == pytest.approx(served * 1e-3 + 10.0 * sum(busy) / 1000.0)


def test_conservation_and_ranges():
    env = RanOffloadingEnv()
    env.reset(4)
    rng = np.random.default_rng(1)
    for _ in range(300):
        out = env.step([rng.uniform()])
        res = env.last
        assert res.generated == res.decoded + res.dropped_queue + res.dropped_service
        assert 0.0 <= out.constraints[0] <= 1.0 and res.energy >= 0
        assert out.reward == pytest.approx(-res.energy / env.cfg.energy_scale)


def test_monotone_energy_and_misses_in_threshold():
    energy, misses = [], []
    for a in np.round(np.arange(0.0, 1.01, 0.1), 1):
        env = RanOffloadingEnv()
        env.reset(11)
        e = m = 0.0
        for _ in range(1000):
            env.step([a])
            e += env.last.energy
            m += env.last.late
        energy.append(e / 1000)
        misses.append(m / 1000)
    assert np.all(np.diff(energy) <= 1e-9)
    assert np.all(np.diff(misses) >= -1e-9)
    assert energy[0] > energy[-1] and misses[-1] > misses[0]


def test_histogram_examples():
    cfg = RanConfig()
    assert np.array_equal(context_histogram([], [], [], cfg), np.zeros(125))
    one = context_histogram([10.0], [5], [3000.0], cfg)
    assert one.sum() == 1.0 and np.count_nonzero(one) == 1
    h = context_histogram([10.0, 10.5, 29.0], [5, 5, 27], [3000.0, 3100.0, 59_000.0], cfg)
    assert sorted(h[h > 0].tolist()) == pytest.approx([1 / 3, 2 / 3])


def test_seeded_determinism_all_envs():
    for kind in ("synthetic", "polynomial", "ran"):
        seqs = []
        for _ in range(2):
            env = make_env(kind)
            obs = [env.reset(21)]
            for i in range(30):
                a = np.full(env.action_dim, 0.1 * (i % 7) - 0.2)
                a = np.clip(a, env.action_low, env.action_high)
                out = env.step(a)
                obs.append(np.concatenate([[out.reward], out.constraints, out.context]))
            seqs.append(np.concatenate(obs))
        assert np.array_equal(seqs[0], seqs[1])


def test_state_roundtrip_continues_identically():
    env = RanOffloadingEnv()
    env.reset(2)
    env.step([0.4])
    meta, arrays = env.get_state()
    a = [env.step([0.6]).reward for _ in range(5)]
    env.set_state(meta, arrays)
    b = [env.step([0.6]).reward for _ in range(5)]
    assert a == b


def test_trace_replay(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text("tti_index,size_bits,snr_db,mcs_index\n"
                    "0,1000,12.0,10\n0,2000,15.0,12\n150,59000,28.0,27\n")
    rows = load_trace(path)
    assert rows.shape == (3, 4)
    env = RanOffloadingEnv(trace_file=str(path))
    s0 = env.reset(0)
    assert s0.sum() == pytest.approx(1.0) and np.count_nonzero(s0) <= 2
    env.step([1.0])
    assert env.last.generated == 2
    env.step([1.0])
    assert env.last.generated == 1
    env.step([1.0])
    assert env.last.generated == 2  # wraps around


def test_trace_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("0,100,1,1\n1,abc,2,2\n")
    with pytest.raises(ConfigError, match="bad.csv:2"):
        load_trace(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("tti_index,size_bits,snr_db,mcs_index\n")
    with pytest.raises(ConfigError):
        load_trace(empty)


def test_ran_config_validation():
    with pytest.raises(ConfigError):
        RanConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        RanConfig.from_dict({"cpu": {"speed": 2}})
    with pytest.raises(ConfigError):
        RanConfig(epsilon=0.0)
    cfg = RanConfig.from_dict({"cpu": {"servers": 3}, "epsilon": 0.1})
    assert cfg.cpu.servers == 3 and cfg.cpu.idle_w == 8.0
    assert replace(cfg, epsilon=0.2).epsilon == 0.2


def test_make_env():
    assert make_env("polynomial", dim=4).context_dim == 4
    ran = make_env("ran", epsilon=0.1)
    assert ran.constraints[0].bound == pytest.approx(0.9)
    assert ran.constraints[0].direction == "lower"
    with pytest.raises(ConfigError):
        make_env("cartpole")
