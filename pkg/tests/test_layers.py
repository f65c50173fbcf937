import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swe_attention import autodiff as ad
from swe_attention.autodiff import ShapeError, Tensor
from swe_attention.layers import (LSTM, EncoderConfig, LayerNorm, Linear, MultiHeadAttention,
                                  TransformerEncoder, dropout, linear_forward, lstm_forward,
                                  positional_encoding)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------- linear

def test_linear_identity_weights_pass_through(rng):
    layer = Linear(3, 3)
    layer.weight.data[:] = np.eye(3)
    layer.bias.data[:] = 0.0
    x = rng.normal(size=(4, 3))
    assert np.array_equal(linear_forward(layer, Tensor(x)).data, x)


def test_linear_zero_weights_give_bias_rows(rng):
    layer = Linear(3, 2)
    layer.weight.data[:] = 0.0
    layer.bias.data[:] = [1.5, -2.0]
    out = layer(Tensor(rng.normal(size=(5, 3)))).data
    assert np.array_equal(out, np.tile([1.5, -2.0], (5, 1)))


def test_linear_shape_and_gradients(rng):
    layer = Linear(5, 3, "gelu", rng)
    x = Tensor(rng.uniform(-1, 1, (4, 5)))
    assert layer(x).shape == (4, 3)
    w = Tensor(rng.uniform(-1, 1, (4, 3)))
    err = ad.grad_check(lambda *_: ad.scale(ad.sum(ad.mul(layer(x), w)), 1e-3),
                        layer.parameters() + [x])
    assert err < 1e-4


def test_linear_dimension_mismatch():
    with pytest.raises(ShapeError):
        Linear(3, 2)(Tensor(np.zeros((4, 5))))


def test_linear_accepts_batched_input(rng):
    layer = Linear(3, 2, "relu", rng)
    x = rng.normal(size=(2, 4, 3))
    batched = layer(Tensor(x)).data
    assert batched.shape == (2, 4, 2)
    assert np.array_equal(batched[1], layer(Tensor(x[1])).data)


def test_init_range_and_count(rng):
    layer = Linear(16, 4, rng=rng)
    assert np.all(np.abs(layer.weight.data) <= 1 / math.sqrt(16))
    assert layer.num_parameters() == Linear.count(16, 4) == 68


def test_unknown_activation():
    with pytest.raises(ValueError):
        Linear(2, 2, "swish")


# ---------------------------------------------------------------- layer norm

def test_layer_norm_rows_mean_zero_variance_matches_eps(rng):
    x = rng.normal(0.0, 3.0, size=(6, 32))
    out = ad.layer_norm(Tensor(x), 1e-5).data
    var = x.var(axis=-1)
    assert np.all(np.abs(out.mean(axis=-1)) <= 1e-9)
    assert np.allclose(out.var(axis=-1), var / (var + 1e-5), atol=1e-9, rtol=0)


def test_layer_norm_without_eps_has_unit_variance(rng):
    out = ad.layer_norm(Tensor(rng.normal(size=(6, 32))), 0.0).data
    assert np.all(np.abs(out.var(axis=-1) - 1.0) <= 1e-9)


def test_layer_norm_module_count():
    assert LayerNorm(8).num_parameters() == LayerNorm.count(8) == 16


# ---------------------------------------------------------------- attention

def test_encoder_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(10, 3, 1)
    assert EncoderConfig(8, 2, 1).ffn_hidden_dim == 32


def test_attention_single_token(rng):
    mha = MultiHeadAttention(8, 2, rng)
    x = Tensor(rng.normal(size=(1, 8)))
    out = mha(x).data
    assert np.array_equal(mha.last_weights, np.ones((2, 1, 1)))
    assert np.allclose(out, mha.out(mha.value(x)).data, atol=1e-15)


def test_attention_identical_rows(rng):
    mha = MultiHeadAttention(8, 4, rng)
    row = rng.normal(size=8)
    out = mha(Tensor(np.tile(row, (5, 1)))).data
    assert np.allclose(out, out[0], atol=1e-14)


def test_attention_weights_rows_sum_to_one(rng):
    mha = MultiHeadAttention(16, 4, rng)
    mha(Tensor(rng.normal(size=(7, 16))))
    assert np.all(np.abs(mha.last_weights.sum(axis=-1) - 1.0) <= 1e-12)


def test_attention_matches_direct_formula(rng):
    d, h = 8, 2
    mha = MultiHeadAttention(d, h, rng)
    x = rng.normal(size=(5, d))
    q = x @ mha.query.weight.data + mha.query.bias.data
    k = x @ mha.key.weight.data + mha.key.bias.data
    v = x @ mha.value.weight.data + mha.value.bias.data
    heads = []
    for j in range(h):
        s = slice(j * d // h, (j + 1) * d // h)
        scores = q[:, s] @ k[:, s].T / math.sqrt(d // h)
        w = np.exp(scores - scores.max(axis=1, keepdims=True))
        heads.append((w / w.sum(axis=1, keepdims=True)) @ v[:, s])
    want = np.concatenate(heads, axis=1) @ mha.out.weight.data + mha.out.bias.data
    assert np.allclose(mha(Tensor(x)).data, want, atol=1e-12)


# ---------------------------------------------------------------- encoder

@settings(max_examples=10, deadline=None)
@given(st.integers(1, 9), st.sampled_from([(8, 2), (12, 3), (16, 4)]))
def test_encoder_preserves_shape(length, dims):
    d, h = dims
    enc = TransformerEncoder(EncoderConfig(d, h, 2), np.random.default_rng(0))
    x = Tensor(np.random.default_rng(length).normal(size=(length, d)))
    assert enc(x).shape == (length, d)


def test_encoder_permutation_equivariance(rng):
    enc = TransformerEncoder(EncoderConfig(8, 2, 2), rng)
    x = rng.normal(size=(6, 8))
    perm = rng.permutation(6)
    assert np.allclose(enc(Tensor(x[perm])).data, enc(Tensor(x)).data[perm], atol=1e-9, rtol=0)


def test_encoder_gradients(rng):
    enc = TransformerEncoder(EncoderConfig(8, 2, 1), rng)
    x = Tensor(rng.uniform(-1, 1, (4, 8)))
    w = Tensor(rng.uniform(-1, 1, (4, 8)))
    err = ad.grad_check(lambda *_: ad.scale(ad.sum(ad.mul(enc(x), w)), 1e-3),
                        enc.parameters() + [x])
    assert err < 1e-4


def test_encoder_parameter_count():
    cfg = EncoderConfig(8, 2, 3)
    enc = TransformerEncoder(cfg, np.random.default_rng(0))
    per_layer = 4 * (8 * 8 + 8) + 2 * 16 + (8 * 32 + 32) + (32 * 8 + 8)
    assert enc.num_parameters() == TransformerEncoder.count(cfg) == 3 * per_layer


def test_encoder_train_mode_uses_dropout(rng):
    enc = TransformerEncoder(EncoderConfig(8, 2, 1, dropout_rate=0.5), rng)
    x = Tensor(rng.normal(size=(4, 8)))
    eval_out = enc(x, "eval").data
    assert np.array_equal(eval_out, enc(x, "eval").data)
    assert not np.allclose(enc(x, "train", np.random.default_rng(1)).data, eval_out)


def test_positional_encoding_values():
    table = positional_encoding(4, 6)
    assert table.shape == (4, 6)
    assert np.array_equal(table[0], [0, 1, 0, 1, 0, 1])
    assert table[1, 0] == math.sin(1.0)


# ---------------------------------------------------------------- dropout

def test_dropout_eval_and_zero_rate_are_identity(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    assert dropout(x, 0.5, "eval") is x
    assert np.array_equal(dropout(x, 0.0, "train", rng).data, x.data)


def test_dropout_statistics():
    x = Tensor(np.ones(100_000))
    out = dropout(x, 0.5, "train", np.random.default_rng(0)).data
    survivors = out != 0
    assert abs(survivors.mean() - 0.5) <= 0.01
    assert np.all(out[survivors] == 2.0)


@pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
def test_dropout_rate_out_of_range(rate):
    with pytest.raises(ValueError):
        dropout(Tensor(np.ones(3)), rate, "train", np.random.default_rng(0))


# ---------------------------------------------------------------- LSTM

def test_lstm_zero_parameters_give_zero_states(rng):
    lstm = LSTM(3, 4, rng)
    for p in lstm.parameters():
        p.data[:] = 0.0
    assert np.array_equal(lstm(Tensor(rng.normal(size=(5, 3)))).data, np.zeros((5, 4)))


def test_lstm_single_step_matches_cell(rng):
    lstm = LSTM(3, 2, rng)
    x = rng.normal(size=(1, 3))
    z = x[0] @ lstm.w_input.data + lstm.bias.data
    i, f, g, o = np.split(z, 4)
    c = _sigmoid(i) * np.tanh(g)
    h = _sigmoid(o) * np.tanh(c)
    assert np.allclose(lstm_forward(Tensor(x), lstm).data[0], h, atol=1e-15)


def test_lstm_recurrence_matches_reference(rng):
    lstm = LSTM(3, 2, rng)
    x = rng.normal(size=(4, 3))
    h, c = np.zeros(2), np.zeros(2)
    want = []
    for t in range(4):
        z = x[t] @ lstm.w_input.data + h @ lstm.w_hidden.data + lstm.bias.data
        i, f, g, o = np.split(z, 4)
        c = _sigmoid(f) * c + _sigmoid(i) * np.tanh(g)
        h = _sigmoid(o) * np.tanh(c)
        want.append(h)
    assert np.allclose(lstm(Tensor(x)).data, want, atol=1e-14)


def test_lstm_gradients(rng):
    lstm = LSTM(3, 4, rng)
    x = Tensor(rng.uniform(-1, 1, (3, 3)))
    w = Tensor(rng.uniform(-1, 1, (3, 4)))
    err = ad.grad_check(lambda *_: ad.scale(ad.sum(ad.mul(lstm(x), w)), 1e-3),
                        lstm.parameters() + [x])
    assert err < 1e-4


def test_lstm_count_and_mismatch(rng):
    lstm = LSTM(5, 7, rng)
    assert lstm.num_parameters() == LSTM.count(5, 7) == 4 * 7 * (5 + 7 + 1)
    with pytest.raises(ShapeError):
        lstm(Tensor(np.zeros((3, 4))))
