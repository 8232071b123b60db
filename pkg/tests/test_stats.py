import math

import numpy as np
import pytest

from sdgm.errors import InsufficientData
from sdgm.mining import TripletBatch
from sdgm.stats import (POWER_INIT, STAT_FIELDS, StatState, batch_moments, ema_update,
                        update_angle_stats, update_power_stats, write_stats_csv)


def make_batch(theta_pos, theta_neg, valid=None):
    tp = np.asarray(theta_pos, dtype=float)
    tn = np.asarray(theta_neg, dtype=float)
    valid = np.ones(len(tp), bool) if valid is None else np.asarray(valid)
    return TripletBatch(tp, tn, tp - tn, np.zeros(len(tp), int), np.zeros(len(tp), int), valid)


def two_pass(values):
    n = len(values)
    mean = math.fsum(values) / n
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in values) / n)


def test_batch_moments_examples(rng):
    assert batch_moments([1.0, 1.0, 1.0]) == (1.0, 0.0)
    assert batch_moments([0.0, 2.0]) == (1.0, 1.0)
    assert batch_moments([0.0, 2.0, 100.0], [True, True, False]) == (1.0, 1.0)
    values = rng.normal(0.3, 2.0, 10_000)
    mean, std = batch_moments(values)
    om, os_ = two_pass(values.tolist())
    assert abs(mean - om) <= 1e-12 and abs(std - os_) <= 1e-12


def test_batch_moments_needs_two_values():
    with pytest.raises(InsufficientData):
        batch_moments([1.0])
    with pytest.raises(InsufficientData):
        batch_moments([1.0, 2.0], [True, False])


def test_ema_update_examples():
    assert ema_update(10000.0, 300.0) == 9990.3
    for c in (0.0, 1.5, -3.25, 279.0):
        assert ema_update(c, c) == pytest.approx(c, rel=1e-15)


def test_ema_constant_input_contraction():
    beta, mu = 5.0, 1.0
    loop = beta
    for t in range(1, 5001):
        new = ema_update(beta, mu)
        assert abs(new - mu) == pytest.approx(0.999 * abs(beta - mu), rel=1e-9)
        beta = new
        loop = 0.999 * loop + 0.001 * mu
    assert beta == loop
    assert abs(beta - mu) == pytest.approx(0.999 ** 5000 * 4.0, rel=1e-9)


def test_ema_replay_is_bitwise(rng):
    mus = rng.normal(size=1000)
    a = b = 0.7
    for m in mus:
        a = ema_update(a, m)
    for m in mus.tolist():
        b = ema_update(b, m)
    assert a == b


def test_first_batch_seeds_angle_stats():
    batch = make_batch([0.8, 1.0], [1.2, 1.0])
    st = update_angle_stats(StatState(), batch)
    assert st.initialized
    assert (st.e_theta_pos, st.std_theta_pos) == batch_moments(batch.theta_pos)
    assert (st.e_theta_neg, st.std_theta_neg) == batch_moments(batch.theta_neg)
    assert (st.e_theta_rel, st.std_theta_rel) == batch_moments(batch.theta_rel)
    assert st.e_power_pos == POWER_INIT  # untouched


def test_later_batches_use_ema():
    st = StatState(e_theta_pos=0.84, initialized=True)
    st = update_angle_stats(st, make_batch([0.7, 0.9], [1.2, 1.3]))
    assert st.e_theta_pos == pytest.approx(0.83996, abs=1e-15)


def test_masked_triplets_ignored():
    batch = make_batch([0.5, 0.7, 3.0], [1.0, 1.2, np.nan], valid=[True, True, False])
    st = update_angle_stats(StatState(), batch)
    assert st.e_theta_pos == pytest.approx(0.6)
    assert math.isfinite(st.e_theta_neg)


def test_insufficient_valid_triplets():
    with pytest.raises(InsufficientData):
        update_angle_stats(StatState(), make_batch([0.5, 0.7], [1.0, 1.1], valid=[True, False]))


def test_stationary_relative_angle_converges(rng):
    st = StatState()
    for _ in range(10_000):
        rel = rng.normal(-0.34, 0.22, 64)
        tp = rng.uniform(0.6, 1.0, 64)
        st = update_angle_stats(st, make_batch(tp, tp - rel))
    assert abs(st.e_theta_rel - (-0.34)) <= 0.01
    assert abs(st.std_theta_rel - 0.22) <= 0.01


def test_power_stats():
    st = update_power_stats(StatState.fresh(), 300.0, 300.0)
    assert st.e_power_pos == 9990.3 and st.e_power_neg == 9990.3
    st = StatState.fresh()
    for _ in range(30_000):
        st = update_power_stats(st, 280.0, 64.0)
    assert abs(st.e_power_pos - 280.0) <= 1.0
    assert abs(st.e_power_neg - 64.0) <= 1.0
    sym = StatState.fresh()
    for _ in range(100):
        sym = update_power_stats(sym, 64.0, 64.0)
    assert sym.e_power_pos == sym.e_power_neg
    with pytest.raises(ValueError):
        update_power_stats(StatState.fresh(), -1.0, 0.0)


def test_state_dict_roundtrip():
    st = StatState(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 7.0, 8.0, True)
    assert StatState.from_dict(st.to_dict()) == st


def test_stats_csv(tmp_path):
    st = StatState(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 7.0, 8.0, True)
    rows = [dict(iteration=i, **st.as_row()) for i in (0, 10)]
    path = tmp_path / "stats.csv"
    write_stats_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == ["iteration", *STAT_FIELDS]
    assert len(lines) == 3
    assert lines[2].split(",")[0] == "10"
