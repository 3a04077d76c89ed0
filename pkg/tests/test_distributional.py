import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from oracles import central_difference
from riskbandit.distributional import (QuantileSet, critic_loss, critic_loss_grad,
                                       dist_mean, huber, quantile_huber, quantile_loss,
                                       quantile_value)
from riskbandit.errors import ConfigError

taus_st = st.floats(0.001, 1.0)
u_st = st.floats(-50, 50, allow_nan=False)


@pytest.mark.parametrize("tau", [0.1, 0.5, 0.999, 1.0])
def test_quantile_loss_zero_residual(tau):
    assert quantile_loss(0.0, tau) == 0.0


def test_quantile_loss_values():
    assert quantile_loss(1.0, 0.5) == 0.5
    assert quantile_loss(-1.0, 0.5) == 0.5
    assert quantile_loss(1.0, 0.9) == pytest.approx(0.9, abs=1e-12)
    assert quantile_loss(-1.0, 0.9) == pytest.approx(0.1, abs=1e-12)


def test_huber_values():
    assert huber(0.0, 1.0) == 0.0
    assert huber(0.5, 1.0) == pytest.approx(0.125, abs=1e-12)
    assert huber(2.0, 1.0) == pytest.approx(1.5, abs=1e-12)


@pytest.mark.parametrize("kappa", [0.3, 1.0, 4.0])
def test_huber_branches_meet_at_kappa(kappa):
    inside = 0.5 * kappa ** 2
    outside = kappa * (kappa - 0.5 * kappa)
    assert inside == outside
    assert huber(kappa, kappa) == pytest.approx(inside)
    assert huber(np.nextafter(kappa, 10), kappa) == pytest.approx(inside)


@pytest.mark.parametrize("kappa", [0.0, -1.0])
def test_huber_rejects_bad_kappa(kappa):
    with pytest.raises(ConfigError):
        huber(1.0, kappa)
    with pytest.raises(ConfigError):
        quantile_huber(1.0, 0.5, kappa)


def test_quantile_huber_values():
    assert quantile_huber(0.0, 0.9, 1.0) == 0.0
    assert quantile_huber(0.5, 0.9, 1.0) == pytest.approx(0.1125, abs=1e-12)
    assert quantile_huber(-0.5, 0.9, 1.0) == pytest.approx(0.0125, abs=1e-12)


def test_quantile_huber_small_kappa_limit():
    assert abs(quantile_huber(0.3, 0.7, 1e-6) - quantile_loss(0.3, 0.7)) < 1e-6


@given(u_st, taus_st, st.floats(0.01, 10))
def test_quantile_huber_non_negative_and_zero_only_at_zero(u, tau, kappa):
    v = quantile_huber(u, tau, kappa)
    assert v >= 0
    if u != 0 and tau < 1.0 and abs(u) > 1e-6:
        assert v > 0


@given(st.floats(1e-3, 20), st.floats(1e-3, 20), taus_st, st.floats(0.1, 5), st.booleans())
def test_quantile_huber_monotone_in_magnitude(x, y, tau, kappa, negative):
    lo, hi = sorted((x, y))
    s = -1.0 if negative else 1.0
    assert quantile_huber(s * lo, tau, kappa) <= quantile_huber(s * hi, tau, kappa) + 1e-15


@given(st.floats(1e-3, 20), st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.1, 5))
def test_quantile_huber_monotone_in_tau(u, t1, t2, kappa):
    lo, hi = sorted((t1, t2))
    assert quantile_huber(u, lo, kappa) <= quantile_huber(u, hi, kappa)
    assert quantile_huber(-u, lo, kappa) >= quantile_huber(-u, hi, kappa)


def test_critic_loss_perfect_prediction():
    taus = QuantileSet.upper().taus
    assert critic_loss(np.full(9, 1.7), 1.7, taus, 1.0) == 0.0


def test_critic_loss_single_term():
    assert critic_loss([0.0], 0.5, [0.5], 1.0) == pytest.approx(0.0625, abs=1e-12)


def test_critic_loss_batch_is_mean_of_sums():
    taus = (0.2, 0.5, 0.9)
    pred = np.array([[0.0, 1.0, 2.0], [-1.0, 0.5, 3.0]])
    target = np.array([0.7, -0.4])
    per = [critic_loss(pred[i], target[i], taus, 1.0) for i in range(2)]
    assert critic_loss(pred, target, taus, 1.0) == pytest.approx(np.mean(per), abs=1e-14)


def test_critic_loss_length_mismatch():
    with pytest.raises(ValueError):
        critic_loss([0.0, 1.0], 0.0, (0.5,), 1.0)


def test_critic_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    taus = QuantileSet.uniform(21).taus
    for _ in range(20):
        pred = rng.normal(size=(4, 21)) * 2
        target = rng.normal(size=4) * 2
        u = target[:, None] - pred
        if np.min(np.abs(u)) < 1e-3 or np.min(np.abs(np.abs(u) - 1.0)) < 1e-3:
            continue  # keep clear of the loss's branch points
        g = critic_loss_grad(pred, target, taus, 1.0)
        fd = central_difference(lambda: critic_loss(pred, target, taus, 1.0), pred)
        assert np.max(np.abs(g - fd)) < 1e-5


def test_dist_mean():
    assert dist_mean([1.0, 2.0, 3.0]) == 2.0
    assert dist_mean(np.full(7, -0.4)) == pytest.approx(-0.4)
    with pytest.raises(ValueError):
        dist_mean([])


def test_dist_mean_of_normal_quantiles():
    # Phi^-1(1) is infinite, so the unit level is left out; the rest is symmetric.
    levels = QuantileSet.uniform(21).array[:-1]
    assert abs(dist_mean(stats.norm.ppf(levels))) < 0.05
    alt = np.arange(1, 22) / 22
    assert abs(dist_mean(stats.norm.ppf(alt))) < 0.05


def test_quantile_value_lookup():
    qs = QuantileSet((0.1, 0.5, 0.9))
    assert quantile_value([-1.0, 0.0, 1.0], qs, 0.9) == 1.0
    assert quantile_value([-1.0, 0.0, 1.0], qs, 0.1) == -1.0
    with pytest.raises(ConfigError):
        quantile_value([-1.0, 0.0, 1.0], qs, 0.25)


def test_quantile_sets():
    assert QuantileSet.uniform(21).taus[-1] == 1.0
    assert len(QuantileSet.uniform(21)) == 21
    low = QuantileSet.lower()
    assert 0.005 in low and 0.001 in low and 0.9 in low
    assert 0.995 in QuantileSet.upper()
    with pytest.raises(ConfigError):
        QuantileSet((0.5, 0.3))
    with pytest.raises(ConfigError):
        QuantileSet((0.0, 0.5))
    with pytest.raises(ConfigError):
        QuantileSet(())
