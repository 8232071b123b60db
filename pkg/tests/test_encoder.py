import numpy as np
import pytest

from sdgm.autodiff import Tensor, backward, finite_diff_check, recording
from sdgm.encoder import (EncoderConfig, dense, dropout, dropout_rng, encode, encode_patch, frn, frn_tlu,
                          init_params)
from sdgm.errors import ShapeMismatch


def test_dense_examples(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    np.testing.assert_array_equal(dense(x, Tensor(np.eye(4)), Tensor(np.zeros(4))).data, x.data)
    b = rng.normal(size=5)
    np.testing.assert_array_equal(dense(x, Tensor(np.zeros((4, 5))), Tensor(b)).data, np.tile(b, (3, 1)))
    with pytest.raises(ShapeMismatch):
        dense(x, Tensor(np.zeros((3, 5))))


def test_dense_gradient(rng):
    params = {"x": rng.normal(size=(3, 4)), "w": rng.normal(size=(4, 5)), "b": rng.normal(size=5)}
    weights = np.arange(15.0).reshape(3, 5)
    assert finite_diff_check(lambda p: (dense(p["x"], p["w"], p["b"]) * weights).sum(), params) <= 1e-6


def test_frn_tlu_constant_group():
    for c in (2.0, -3.0):
        x = Tensor(np.full((1, 6), c))
        y = frn_tlu(x, np.ones(6), np.zeros(6), np.full(6, -np.inf)).data
        np.testing.assert_allclose(y, np.sign(c) * abs(c) / np.sqrt(c * c + 1e-6))
        assert np.allclose(y, np.sign(c), atol=1e-6)


def test_frn_tlu_saturates(rng):
    x = Tensor(rng.normal(size=(4, 8)))
    y = frn_tlu(x, np.ones(8), np.zeros(8), np.full(8, 100.0)).data
    assert np.all(y == 100.0)


def test_frn_tlu_gradient(rng):
    params = {"x": rng.normal(size=(4, 6)), "g": rng.uniform(0.5, 1.5, 6), "b": rng.normal(0, 0.1, 6),
              "t": np.full(6, -0.2)}
    weights = rng.normal(size=(4, 6))

    def f(p):
        return (frn_tlu(p["x"], p["g"], p["b"], p["t"]) * weights).sum()

    y = frn(Tensor(params["x"]), params["g"], params["b"]).data
    assert np.min(np.abs(y + 0.2)) > 1e-3  # away from the kink
    assert finite_diff_check(f, params) <= 1e-6


def test_dropout(rng):
    x = Tensor(rng.normal(size=(5, 5)))
    assert dropout(x, 0.0, rng, True) is x
    assert dropout(x, 0.3, rng, False) is x
    big = Tensor(np.full((1000, 100), 2.0))
    out = dropout(big, 0.3, rng, True).data
    assert abs(out.mean() - 2.0) <= 0.02 * 2.0
    assert set(np.unique(out)) <= {0.0, 2.0 / 0.7}


def test_dropout_mask_is_pure():
    a = dropout_rng(3, 10, 1).random(5)
    b = dropout_rng(3, 10, 1).random(5)
    c = dropout_rng(3, 11, 1).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_identity_encoder_passthrough(rng):
    cfg = EncoderConfig(input_dim=6, widths=(6,), output_dim=6, dropout_rate=0.0, use_frn=False,
                        input_norm=False)
    params = {"h0.w": np.eye(6), "h0.b": np.zeros(6), "out.w": np.eye(6)}
    x = rng.uniform(0, 1, size=(3, 6))
    np.testing.assert_array_equal(encode(x, params, cfg, training=True).data, x)
    np.testing.assert_array_equal(encode_patch(x[0].reshape(2, 3), params, cfg), x[0])


def test_encoder_deterministic_given_seed(rng):
    cfg = EncoderConfig(input_dim=16, widths=(8, 8), output_dim=4, seed=9)
    p1, p2 = init_params(cfg), init_params(cfg)
    for k in p1:
        np.testing.assert_array_equal(p1[k], p2[k])
    x = rng.uniform(size=(5, 16))
    a = encode(x, p1, cfg, training=True, iteration=4).data
    b = encode(x, p2, cfg, training=True, iteration=4).data
    np.testing.assert_array_equal(a, b)
    assert "out.b" not in p1  # last layer carries no bias
    with pytest.raises(ShapeMismatch):
        encode(rng.uniform(size=(5, 15)), p1, cfg)


def test_encoder_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(widths=())
    with pytest.raises(ValueError):
        EncoderConfig(dropout_rate=1.0)


def test_encoder_gradient_small(rng):
    cfg = EncoderConfig(input_dim=9, widths=(7, 5), output_dim=3, seed=1)
    params = init_params(cfg)
    for k in params:
        if k.endswith((".b", ".beta")):
            params[k] = rng.normal(0.0, 0.1, params[k].shape)
    x = rng.uniform(size=(4, 9))
    weights = rng.normal(size=(4, 3))
    assert finite_diff_check(lambda p: (encode(x, p, cfg, training=True, iteration=2) * weights).sum(),
                             params) <= 1e-6
