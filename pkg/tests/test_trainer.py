import math

import numpy as np
import pytest

from sdgm.autodiff import Tensor, finite_diff_check
from sdgm.checkpoint import load_checkpoint, save_checkpoint
from sdgm.data import SynthConfig, generate_synthetic
from sdgm.encoder import EncoderConfig
from sdgm.errors import ConfigError, OutOfRange, ShapeMismatch
from sdgm.modulation import pseudo_loss
from sdgm.stats import StatState
from sdgm.trainer import (OptimState, TrainConfig, TrainState, batch_for_iteration, is_warming, lr_at,
                          mine_from_descriptors, pseudo_loss_tensor, read_log, run, sgd_step, train_step,
                          write_log)

ENC = EncoderConfig(input_dim=64, widths=(24, 16), output_dim=8, seed=4)


@pytest.fixture(scope="module")
def small_set():
    return generate_synthetic(SynthConfig(num_classes=24, patches_per_class=3, patch_size=8, seed=5))


def small_cfg(**kw):
    base = dict(batch_size=12, total_iterations=20, lr_init=0.5, seed=7)
    base.update(kw)
    return TrainConfig(**base)


def test_lr_schedule():
    cfg = TrainConfig(total_iterations=1000)
    assert lr_at(0, cfg) == 1.0
    assert lr_at(950, cfg) == 0.001953125
    assert lr_at(99, cfg) == 1.0
    assert lr_at(100, cfg) == 0.5
    with pytest.raises(OutOfRange):
        lr_at(1000, cfg)
    with pytest.raises(OutOfRange):
        lr_at(-1, cfg)


def test_warmup_boundary():
    cfg = TrainConfig(total_iterations=1000, warmup_fraction=0.1)
    assert is_warming(99, cfg) and not is_warming(100, cfg)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr_init=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(warmup_fraction=1.5)


def test_sgd_examples(rng):
    p = {"w": rng.normal(size=(3, 2))}
    st = OptimState.zeros_like(p)
    same, _ = sgd_step(p, {"w": np.zeros((3, 2))}, st, 0.1, 0.9, 0.0)
    np.testing.assert_array_equal(same["w"], p["w"])
    g = {"w": rng.normal(size=(3, 2))}
    plain, _ = sgd_step(p, g, st, 0.1, 0.0, 0.0)
    np.testing.assert_array_equal(plain["w"], p["w"] - 0.1 * g["w"])
    with pytest.raises(ShapeMismatch):
        sgd_step(p, {"w": np.zeros(6)}, st, 0.1, 0.9, 0.0)


def test_sgd_three_step_unroll(rng):
    p0 = float(rng.normal())
    grads = [float(g) for g in rng.normal(size=3)]
    lr, mu, wd = 0.3, 0.9, 1e-4
    params, st = {"w": np.array([p0])}, OptimState({"w": np.zeros(1)})
    for g in grads:
        params, st = sgd_step(params, {"w": np.array([g])}, st, lr, mu, wd)
    p, v = p0, 0.0
    for g in grads:
        v = mu * v + g + wd * p
        p = p - lr * v
    assert params["w"][0] == p and st.momentum["w"][0] == v and st.iteration == 3


def test_warmup_step_uses_unit_weights(small_set):
    cfg = small_cfg()
    state = TrainState.fresh(ENC, cfg)
    a, p, _ = batch_for_iteration(small_set, cfg, 0)
    result, new = train_step(state, a, p, ENC, cfg)
    w = result.weights
    valid = result.batch.valid_mask
    assert result.warming
    assert np.all(w.w_pos[valid] == 1.0) and np.all(w.w_neg[valid] == 1.0)
    assert w.p_pos == result.n_valid and w.p_neg == result.n_valid
    assert new.stats.e_power_pos == 0.999 * 10000.0 + 0.001 * result.n_valid
    assert new.iteration == 1


def test_logged_loss_matches_offline(small_set):
    cfg = small_cfg(warmup_fraction=0.0)
    state = TrainState.fresh(ENC, cfg)
    for it in range(3):
        a, p, _ = batch_for_iteration(small_set, cfg, it)
        result, state = train_step(state, a, p, ENC, cfg)
        mod = cfg.modulation
        offline = pseudo_loss(result.batch, result.weights, result.stats, mod.alpha, mod.power_adjust)
        assert result.loss == offline
        assert result.stats == state.stats


def test_step_gradient_against_finite_differences(small_set):
    from sdgm.encoder import encode, init_params
    from sdgm.modulation import compute_weights, loss_coefficients
    from sdgm.stats import update_angle_stats, update_power_stats

    cfg = small_cfg(warmup_fraction=0.0)
    enc = EncoderConfig(input_dim=64, widths=(10, 8), output_dim=6, seed=2)
    params = init_params(enc)
    rng = np.random.default_rng(0)
    for k in params:  # zero biases make the input gain exactly scale-invariant
        if k.endswith((".b", ".beta")):
            params[k] = rng.normal(0.0, 0.1, params[k].shape)
    a, p, _ = batch_for_iteration(small_set, cfg, 0)
    x = np.concatenate([a.reshape(len(a), -1), p.reshape(len(p), -1)])
    batch = mine_from_descriptors(encode(x, params, enc, training=True).data, 0.6)
    stats = update_angle_stats(StatState.fresh(), batch)
    w = compute_weights(batch, stats, cfg.modulation, False)
    stats = update_power_stats(stats, w.p_pos, w.p_neg)
    c_pos, c_neg = loss_coefficients(w, stats, 0.9)
    err = finite_diff_check(lambda q: pseudo_loss_tensor(encode(x, q, enc, training=True), batch, c_pos, c_neg),
                            params)
    assert err <= 1e-4


def test_effective_scale_ramps_up():
    from sdgm.config import RunConfig
    from sdgm.experiment import training_data

    cfg = RunConfig(seed=0)
    scales = []
    run(cfg.train(), training_data(cfg), cfg.encoder(), until=100,
        callback=lambda r, s: scales.append(cfg.alpha * r.n_valid / s.stats.e_power_pos))
    assert len(scales) == 100
    assert np.all(np.diff(scales) >= 0)


def test_warmup_whole_run_is_baseline(small_set):
    cfg = small_cfg(total_iterations=10, warmup_fraction=1.0)
    seen = []
    run(cfg, small_set, ENC, callback=lambda r, s: seen.append(r))
    assert len(seen) == 10
    for r in seen:
        assert r.warming
        v = r.batch.valid_mask
        assert np.all(r.weights.w_pos[v] == 1.0) and np.all(r.weights.w_neg[v] == 1.0)


def test_run_is_deterministic(small_set, tmp_path):
    cfg = small_cfg()
    s1, rows1 = run(cfg, small_set, ENC)
    s2, rows2 = run(cfg, small_set, ENC)
    write_log(tmp_path / "a.csv", rows1)
    write_log(tmp_path / "b.csv", rows2)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert len(read_log(tmp_path / "a.csv")) == 20
    for k in s1.params:
        np.testing.assert_array_equal(s1.params[k], s2.params[k])


def test_checkpoint_resume_bitwise(small_set, tmp_path):
    cfg = small_cfg()
    full, rows_full = run(cfg, small_set, ENC)
    mid, _ = run(cfg, small_set, ENC, until=8)
    path = tmp_path / "ck.npz"
    save_checkpoint(path, mid, ENC, cfg)
    loaded, enc, cfg2 = load_checkpoint(path)
    assert enc == ENC and cfg2 == cfg and loaded.iteration == 8 and loaded.stats == mid.stats
    resumed, rows = run(cfg, small_set, ENC, state=loaded)
    assert rows == rows_full[8:]
    for k in full.params:
        np.testing.assert_array_equal(full.params[k], resumed.params[k])
        np.testing.assert_array_equal(full.optim.momentum[k], resumed.optim.momentum[k])


def test_run_rejects_infeasible(small_set):
    with pytest.raises(ConfigError):
        run(small_cfg(batch_size=25), small_set, ENC)
    with pytest.raises(ConfigError):
        run(small_cfg(), small_set, EncoderConfig(input_dim=16 * 16))


def test_skipped_step_advances(small_set, monkeypatch):
    import sdgm.trainer as tr
    from sdgm.mining import mine_triplets

    monkeypatch.setattr(tr, "mine_from_descriptors",
                        lambda raw, tau: mine_triplets(np.zeros((len(raw) // 2,) * 2), 0.6))
    cfg = small_cfg()
    state = TrainState.fresh(ENC, cfg)
    a, p, _ = batch_for_iteration(small_set, cfg, 0)
    result, new = train_step(state, a, p, ENC, cfg)
    assert result.skipped and math.isnan(result.loss)
    assert new.iteration == 1 and new.stats == state.stats
    assert new.params is state.params
