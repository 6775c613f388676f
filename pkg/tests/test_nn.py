import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tegru import nn
from tegru import tensor as T
from tegru.tensor import Rng, ShapeError, Tensor
from oracles import brute_force_attention, gru_reference


@pytest.fixture(autouse=True)
def float64():
    with T.default_dtype(np.float64):
        yield


def rand(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0, scale, size=shape), requires_grad=True)


def mha_values(p):
    return ([w.data for w in p.w_q], [w.data for w in p.w_k], [w.data for w in p.w_v], p.w_o.data)


# -- attention ------------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 2), st.integers(1, 4), st.sampled_from([(2, 1), (2, 2), (4, 1), (4, 2)]),
       st.integers(0, 2**31 - 1), st.booleans())
def test_attention_matches_brute_force(b, n, dh, seed, masked):
    d, heads = dh
    rng = np.random.default_rng(seed)
    p = nn.MultiHeadAttentionParams.init(Rng(seed), d, heads)
    x = rng.normal(size=(b, n, d))
    mask = None
    if masked:
        mask = rng.random((b, n)) < 0.4
        mask[:, -1] = False  # keep at least one key
    got = nn.multi_head_self_attention(Tensor(x), p, mask).data
    assert np.allclose(got, brute_force_attention(x, *mha_values(p), mask=mask), atol=1e-6)


def test_attention_single_position_passes_value_through():
    rng = np.random.default_rng(0)
    p = nn.MultiHeadAttentionParams.init(Rng(1), 4, 2)
    x = rng.normal(size=(1, 1, 4))
    values = np.concatenate([x[0] @ w.data for w in p.w_v], axis=-1)
    assert np.allclose(nn.multi_head_self_attention(Tensor(x), p).data[0], values @ p.w_o.data)


def test_attention_dominant_key():
    eye = Tensor(np.eye(2))
    p = nn.MultiHeadAttentionParams([eye], [eye], [eye], eye, n_heads=1)
    # scores for the first query: (100, 0)/sqrt(2) gap >> 1
    x = Tensor(np.array([[[10.0, 0.0], [0.0, 0.0]]]))
    out = nn.multi_head_self_attention(x, p).data
    assert np.allclose(out[0, 0], [10.0, 0.0], atol=1e-12)


def test_attention_weights_rows_and_mask():
    rng = np.random.default_rng(3)
    p = nn.MultiHeadAttentionParams.init(Rng(3), 4, 2)
    x = Tensor(rng.normal(size=(2, 5, 4)))
    mask = np.array([[True, True, False, False, False], [False] * 5])
    _, weights = nn.multi_head_self_attention(x, p, mask, return_weights=True)
    for w in weights:
        assert w.data.min() >= 0
        assert np.allclose(w.data.sum(-1), 1, atol=1e-6)
        assert np.all(w.data[0, :, :2] < 1e-9)


def test_attention_heads_must_divide():
    with pytest.raises(ValueError, match="divisible"):
        nn.MultiHeadAttentionParams.init(Rng(0), 8, 3)


def test_shared_identity_mode():
    p = nn.MultiHeadAttentionParams.init(Rng(0), 4, 2, shared_identity=True)
    assert p.w_q == [] and p.w_o.shape == (8, 4)
    x = np.random.default_rng(0).normal(size=(1, 3, 4))
    ident = [np.eye(4)] * 2
    ref = brute_force_attention(x, ident, ident, ident, p.w_o.data)
    assert np.allclose(nn.multi_head_self_attention(Tensor(x), p).data, ref, atol=1e-9)


# -- encoder block --------------------------------------------------------------------


def test_encoder_block_inference_is_deterministic():
    p = nn.EncoderBlockParams.init(Rng(0), 8, 2, 16, dropout=0.3)
    x = Tensor(np.random.default_rng(0).normal(size=(2, 5, 8)))
    a = nn.encoder_block(x, p, training=False).data
    assert np.array_equal(a, nn.encoder_block(x, p, training=False).data)
    assert not np.array_equal(a, nn.encoder_block(x, p, training=True, rng=Rng(1)).data)


def test_encoder_block_with_zero_ffn():
    p = nn.EncoderBlockParams.init(Rng(0), 8, 2, 16)
    for t in (p.ffn_w1, p.ffn_w2):
        t.data = np.zeros_like(t.data)
    x = Tensor(np.random.default_rng(1).normal(size=(1, 4, 8)))
    one, zero = p.norm1_gain, p.norm1_bias
    ln = lambda a: T.layernorm(a, one, zero)  # noqa: E731
    expect = ln(ln(T.add(nn.multi_head_self_attention(x, p.attention), x))).data
    assert np.allclose(nn.encoder_block(x, p).data, expect, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_encoder_permutation_equivariance(n, seed):
    rng = np.random.default_rng(seed)
    p = nn.EncoderBlockParams.init(Rng(seed), 8, 2, 16)
    x = rng.normal(size=(2, n, 8))
    perm = rng.permutation(n)
    out = nn.encoder_block(Tensor(x), p).data
    assert np.allclose(nn.encoder_block(Tensor(x[:, perm]), p).data, out[:, perm], atol=1e-5)


# -- GRU and friends ------------------------------------------------------------------


def _zero_gru(d_in, d_h):
    z = lambda *s: Tensor(np.zeros(s))  # noqa: E731
    return nn.GRUParams(z(d_in, d_h), z(d_in, d_h), z(d_in, d_h), z(d_h, d_h), z(d_h, d_h), z(d_h, d_h),
                        z(d_h), z(d_h), z(d_h))


def test_gru_zero_weights_halves_state():
    h = np.array([[0.7, -1.3, 2.0]])
    out = nn.gru_step(Tensor(np.ones((1, 2))), Tensor(h), _zero_gru(2, 3), return_gates=True)
    assert np.array_equal(out[0].data, 0.5 * h)
    assert np.all(out[1].data == 0.5) and np.all(out[2].data == 0.5)


def test_gru_from_zero_state_on_2d_instance():
    p = nn.GRUParams.init(Rng(5), 2, 2, bias=False)
    x = np.array([[0.3, -0.8]])
    u = 1 / (1 + np.exp(-(x @ p.w_z.data)))
    expect = u * np.tanh(x @ p.w_h.data)
    assert np.allclose(nn.gru_step(Tensor(x), Tensor(np.zeros((1, 2))), p).data, expect, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gru_matches_reference_and_bounds(seed):
    rng = np.random.default_rng(seed)
    p = nn.GRUParams.init(Rng(seed), 3, 4)
    for b in (p.b_z, p.b_r, p.b_h):
        b.data = rng.normal(size=4)
    x, h = rng.normal(size=(2, 3)), rng.uniform(-1, 1, size=(2, 4))
    got, u, r = nn.gru_step(Tensor(x), Tensor(h), p, return_gates=True)
    w = {"z": p.w_z.data, "r": p.w_r.data, "h": p.w_h.data}
    uu = {"z": p.u_z.data, "r": p.u_r.data, "h": p.u_h.data}
    bb = {"z": p.b_z.data, "r": p.b_r.data, "h": p.b_h.data}
    assert np.allclose(got.data, gru_reference(x, h, w, uu, bb), atol=1e-12)
    for g in (u.data, r.data):
        assert np.all((g > 0) & (g < 1))
    assert np.all(np.abs(got.data) <= 1.0)


def test_gru_shape_error():
    with pytest.raises(ShapeError):
        nn.gru_step(Tensor(np.ones((1, 3))), Tensor(np.zeros((1, 4))), nn.GRUParams.init(Rng(0), 2, 4))


@pytest.mark.parametrize("kind", ["RNN", "LSTM", "GRU"])
def test_unrolled_equals_chained_steps(kind):
    rng = np.random.default_rng(0)
    p = nn.init_recurrent(Rng(0), kind, 3, 4, bidirectional=False)
    x = rng.normal(size=(2, 3, 3))
    states, final = nn.run_recurrent(Tensor(x), kind, False, p)
    h = c = Tensor(np.zeros((2, 4)))
    for t in range(3):
        xt = Tensor(x[:, t])
        if kind == "LSTM":
            h, c = nn.lstm_step(xt, (h, c), p)
        else:
            h = (nn.gru_step if kind == "GRU" else nn.rnn_step)(xt, h, p)
        assert np.array_equal(states.data[:, t], h.data)
    assert np.array_equal(final.data, h.data)


@pytest.mark.parametrize("kind", ["RNN", "LSTM", "GRU"])
def test_single_step_final_is_state(kind):
    p = nn.init_recurrent(Rng(0), kind, 3, 4, bidirectional=True)
    states, final = nn.run_recurrent(Tensor(np.ones((1, 1, 3))), kind, True, p)
    assert final.shape == (1, 4)
    assert np.array_equal(final.data, states.data[:, 0])


def test_bidirectional_final_layout():
    p = nn.init_recurrent(Rng(2), "GRU", 3, 6, bidirectional=True)
    x = np.random.default_rng(2).normal(size=(1, 4, 3))
    states, final = nn.run_recurrent(Tensor(x), "GRU", True, p)
    _, fwd = nn.run_recurrent(Tensor(x), "GRU", False, p.forward)
    _, bwd = nn.run_recurrent(Tensor(x[:, ::-1].copy()), "GRU", False, p.backward)
    assert np.allclose(final.data, np.concatenate([fwd.data, bwd.data], -1))
    assert np.allclose(states.data[:, 0, 3:], bwd.data)


def test_front_padding_invariance_without_bias():
    p = nn.GRUParams.init(Rng(4), 3, 5, bias=False)
    x = np.random.default_rng(4).normal(size=(1, 2, 3))
    padded = np.concatenate([np.zeros((1, 1, 3)), x], axis=1)
    _, a = nn.run_recurrent(Tensor(x), "GRU", False, p)
    _, b = nn.run_recurrent(Tensor(padded), "GRU", False, p)
    assert np.allclose(a.data, b.data, atol=1e-15)


def test_run_recurrent_rejects_empty():
    with pytest.raises(ShapeError):
        nn.run_recurrent(Tensor(np.zeros((1, 0, 3))), "GRU", False, nn.GRUParams.init(Rng(0), 3, 2))


def test_lstm_forget_bias():
    p = nn.LSTMParams.init(Rng(0), 2, 3)
    assert np.all(p.b_f.data == 1.0) and not p.b_i.data.any()


# -- attention pooling ----------------------------------------------------------------


def test_attention_pool_examples():
    p = nn.AttentionPoolParams.init(Rng(0), 3)
    row = np.array([[[0.2, -0.4, 1.0]]])
    assert np.allclose(nn.attention_pool(Tensor(row), p).data, row[:, 0])

    flat = nn.AttentionPoolParams(p.w, p.b, Tensor(np.zeros((3, 1))))
    rows = np.random.default_rng(0).normal(size=(2, 4, 3))
    assert np.allclose(nn.attention_pool(Tensor(rows), flat).data, rows.mean(1))
    assert np.allclose(nn.attention_scale(Tensor(rows), flat).data, rows)

    # scores 25*tanh(0) and 25*tanh(30): a gap above 20
    eye = nn.AttentionPoolParams(Tensor(np.eye(3)), Tensor(np.zeros(3)), Tensor(np.array([[25.0], [0], [0]])))
    rows = np.array([[[0.0, 1.0, 2.0], [30.0, -1.0, 0.5]]])
    assert np.allclose(nn.attention_pool(Tensor(rows), eye).data, rows[:, 1], atol=30 * math.exp(-20))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_attention_pool_is_convex(n, seed):
    rng = np.random.default_rng(seed)
    p = nn.AttentionPoolParams.init(Rng(seed), 4)
    rows = rng.normal(size=(2, n, 4))
    alpha = nn.attention_weights(Tensor(rows), p).data
    assert np.all(alpha >= 0) and np.allclose(alpha.sum(-1), 1)
    assert np.allclose(nn.attention_pool(Tensor(rows), p).data, np.einsum("bn,bnd->bd", alpha, rows))


# -- head -----------------------------------------------------------------------------


def test_classify_head_examples():
    h = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
    w0 = Tensor(np.zeros((4, 2)))
    assert np.allclose(nn.classify_head(h, w0, Tensor(np.zeros(2))).data, math.log(0.5))
    out = nn.classify_head(h, w0, Tensor(np.array([math.log(3), 0.0])))
    assert np.allclose(np.exp(out.data), [0.75, 0.25])
    w = Tensor(np.random.default_rng(1).normal(size=(4, 2)))
    a = nn.classify_head(h, w, Tensor(np.zeros(2))).data
    assert np.allclose(a, nn.classify_head(h, w, Tensor(np.full(2, 7.5))).data)
    assert np.allclose(np.exp(a).sum(-1), 1, atol=1e-6)


def test_predict_tie_goes_to_class_zero():
    assert nn.predict(np.log([[0.5, 0.5], [0.2, 0.8], [0.9, 0.1]])).tolist() == [0, 1, 0]
