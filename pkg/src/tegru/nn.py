"""Neural building blocks: self-attention encoder, recurrent cells, pooling, head.

All blocks are plain functions over parameter dataclasses so the model zoo can
compose them in any order. Weight matrices are stored ``[d_in, d_out]`` and
applied as ``x @ W``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Rng, ShapeError, Tensor

MASK_FILL = -1e9


class Params:
    """Mixin for parameter dataclasses: recursive, ordered tensor listing."""

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for f in fields(self):
            yield from _walk(getattr(self, f.name), prefix + f.name)

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def count(self) -> int:
        return sum(t.data.size for t in self.tensors())


def _walk(value, name: str):
    if isinstance(value, Tensor):
        yield name, value
    elif isinstance(value, Params):
        yield from value.named_tensors(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


def init_weight(rng: Rng, d_in: int, d_out: int) -> Tensor:
    bound = math.sqrt(1.0 / d_in)
    return Tensor(rng.uniform((d_in, d_out), -bound, bound), requires_grad=True)


def zeros(*shape: int, value: float = 0.0) -> Tensor:
    return Tensor(np.full(shape, value, dtype=T.get_default_dtype()), requires_grad=True)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = T.matmul(x, w)
    return y if b is None else T.add(y, b)


# -- multi-head self-attention ---------------------------------------------------


@dataclass
class MultiHeadAttentionParams(Params):
    w_q: list[Tensor]
    w_k: list[Tensor]
    w_v: list[Tensor]
    w_o: Tensor
    n_heads: int = 1
    shared_identity: bool = False

    @classmethod
    def init(cls, rng: Rng, d_model: int, n_heads: int, shared_identity: bool = False):
        if n_heads < 1 or d_model % n_heads:
            raise ValueError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        if shared_identity:
            # every head attends over the raw input; only the output projection learns
            return cls([], [], [], init_weight(rng, n_heads * d_model, d_model), n_heads, True)
        d_k = d_model // n_heads
        w_q, w_k, w_v = [], [], []
        for _ in range(n_heads):
            w_q.append(init_weight(rng, d_model, d_k))
            w_k.append(init_weight(rng, d_model, d_k))
            w_v.append(init_weight(rng, d_model, d_k))
        return cls(w_q, w_k, w_v, init_weight(rng, n_heads * d_k, d_model), n_heads, False)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, key_mask: np.ndarray | None = None):
    """``softmax(q k^T / sqrt(d_k)) v``; returns (output, weights)."""
    d_k = k.shape[-1]
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(d_k))
    if key_mask is not None:
        full = np.broadcast_to(np.asarray(key_mask, bool)[:, None, :], scores.shape)
        scores = T.where(full, scores, MASK_FILL)
    weights = T.softmax(scores, axis=-1)
    return T.matmul(weights, v), weights


def multi_head_self_attention(
    x: Tensor,
    p: MultiHeadAttentionParams,
    mask: np.ndarray | None = None,
    return_weights: bool = False,
):
    """Self-attention over ``x [b, n, d_model]``; ``mask`` is True at PAD positions."""
    if x.ndim != 3:
        raise ShapeError(f"attention input must be [b, n, d_model], got {x.shape}")
    d_model = x.shape[-1]
    if d_model % p.n_heads:
        raise ValueError(f"d_model={d_model} is not divisible by n_heads={p.n_heads}")
    heads, weights = [], []
    for i in range(p.n_heads):
        if p.shared_identity:
            q = k = v = x
        else:
            q, k, v = T.matmul(x, p.w_q[i]), T.matmul(x, p.w_k[i]), T.matmul(x, p.w_v[i])
        out, w = scaled_dot_attention(q, k, v, mask)
        heads.append(out)
        weights.append(w)
    merged = heads[0] if len(heads) == 1 else T.concat(heads, axis=-1)
    out = T.matmul(merged, p.w_o)
    return (out, weights) if return_weights else out


# -- transformer encoder block ----------------------------------------------------


@dataclass
class EncoderBlockParams(Params):
    attention: MultiHeadAttentionParams
    norm1_gain: Tensor
    norm1_bias: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    norm2_gain: Tensor
    norm2_bias: Tensor
    dropout: float = 0.0

    @classmethod
    def init(cls, rng: Rng, d_model: int, n_heads: int, d_ff: int, dropout: float = 0.0,
             shared_identity: bool = False):
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {dropout}")
        return cls(
            attention=MultiHeadAttentionParams.init(rng, d_model, n_heads, shared_identity),
            norm1_gain=zeros(d_model, value=1.0),
            norm1_bias=zeros(d_model),
            ffn_w1=init_weight(rng, d_model, d_ff),
            ffn_b1=zeros(d_ff),
            ffn_w2=init_weight(rng, d_ff, d_model),
            ffn_b2=zeros(d_model),
            norm2_gain=zeros(d_model, value=1.0),
            norm2_bias=zeros(d_model),
            dropout=dropout,
        )


def feed_forward(x: Tensor, p: EncoderBlockParams) -> Tensor:
    return linear(T.relu(linear(x, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2)


def encoder_block(
    x: Tensor,
    p: EncoderBlockParams,
    training: bool = False,
    rng: Rng | None = None,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Attention and feed-forward sublayers, each followed by residual add and layernorm.

    Dropout hits each sublayer output before its residual add. There is no
    positional encoding, so without a mask the block is permutation-equivariant.
    """
    att = T.dropout(multi_head_self_attention(x, p.attention, mask), p.dropout, rng, training)
    resid = T.layernorm(T.add(att, x), p.norm1_gain, p.norm1_bias)
    ff = T.dropout(feed_forward(resid, p), p.dropout, rng, training)
    return T.layernorm(T.add(resid, ff), p.norm2_gain, p.norm2_bias)


# -- recurrent cells -------------------------------------------------------------------


@dataclass
class GRUParams(Params):
    w_z: Tensor
    w_r: Tensor
    w_h: Tensor
    u_z: Tensor
    u_r: Tensor
    u_h: Tensor
    b_z: Tensor | None = None
    b_r: Tensor | None = None
    b_h: Tensor | None = None

    @property
    def hidden(self) -> int:
        return self.u_z.shape[0]

    @classmethod
    def init(cls, rng: Rng, d_in: int, d_hidden: int, bias: bool = True):
        ws = [init_weight(rng, d_in, d_hidden) for _ in range(3)]
        us = [init_weight(rng, d_hidden, d_hidden) for _ in range(3)]
        bs = [zeros(d_hidden) for _ in range(3)] if bias else [None] * 3
        return cls(*ws, *us, *bs)


def _gate(x: Tensor, h: Tensor, w: Tensor, u: Tensor, b: Tensor | None) -> Tensor:
    return linear(x, w, b) + T.matmul(h, u)


def gru_step(x_t: Tensor, h_prev: Tensor, p: GRUParams, return_gates: bool = False):
    """One GRU update: ``h_t = (1 - u) * h_prev + u * tanh(x W_h + (h_prev * r) U_h)``."""
    if x_t.shape[-1] != p.w_z.shape[0] or h_prev.shape[-1] != p.hidden:
        raise ShapeError(
            f"gru_step: x_t {x_t.shape} / h_prev {h_prev.shape} do not fit "
            f"W {p.w_z.shape} / U {p.u_z.shape}"
        )
    u = T.sigmoid(_gate(x_t, h_prev, p.w_z, p.u_z, p.b_z))
    r = T.sigmoid(_gate(x_t, h_prev, p.w_r, p.u_r, p.b_r))
    cand = T.tanh(_gate(x_t, T.mul(h_prev, r), p.w_h, p.u_h, p.b_h))
    h = T.mul(T.sub(1.0, u), h_prev) + T.mul(u, cand)
    return (h, u, r) if return_gates else h


@dataclass
class RNNParams(Params):
    w: Tensor
    u: Tensor
    b: Tensor | None = None

    @property
    def hidden(self) -> int:
        return self.u.shape[0]

    @classmethod
    def init(cls, rng: Rng, d_in: int, d_hidden: int, bias: bool = True):
        return cls(init_weight(rng, d_in, d_hidden), init_weight(rng, d_hidden, d_hidden),
                   zeros(d_hidden) if bias else None)


def rnn_step(x_t: Tensor, h_prev: Tensor, p: RNNParams) -> Tensor:
    return T.tanh(_gate(x_t, h_prev, p.w, p.u, p.b))


@dataclass
class LSTMParams(Params):
    w_i: Tensor
    w_f: Tensor
    w_o: Tensor
    w_c: Tensor
    u_i: Tensor
    u_f: Tensor
    u_o: Tensor
    u_c: Tensor
    b_i: Tensor | None = None
    b_f: Tensor | None = None
    b_o: Tensor | None = None
    b_c: Tensor | None = None

    @property
    def hidden(self) -> int:
        return self.u_i.shape[0]

    @classmethod
    def init(cls, rng: Rng, d_in: int, d_hidden: int, bias: bool = True, forget_bias: float = 1.0):
        ws = [init_weight(rng, d_in, d_hidden) for _ in range(4)]
        us = [init_weight(rng, d_hidden, d_hidden) for _ in range(4)]
        if bias:
            bs = [zeros(d_hidden), zeros(d_hidden, value=forget_bias), zeros(d_hidden), zeros(d_hidden)]
        else:
            bs = [None] * 4
        return cls(*ws, *us, *bs)


def lstm_step(x_t: Tensor, state: tuple[Tensor, Tensor], p: LSTMParams) -> tuple[Tensor, Tensor]:
    h, c = state
    i = T.sigmoid(_gate(x_t, h, p.w_i, p.u_i, p.b_i))
    f = T.sigmoid(_gate(x_t, h, p.w_f, p.u_f, p.b_f))
    o = T.sigmoid(_gate(x_t, h, p.w_o, p.u_o, p.b_o))
    g = T.tanh(_gate(x_t, h, p.w_c, p.u_c, p.b_c))
    c = T.mul(f, c) + T.mul(i, g)
    return T.mul(o, T.tanh(c)), c


CELLS = {"RNN": RNNParams, "LSTM": LSTMParams, "GRU": GRUParams}


@dataclass
class BiParams(Params):
    forward: Params
    backward: Params


def init_recurrent(rng: Rng, kind: str, d_in: int, d_hidden: int, bidirectional: bool, bias: bool = True):
    """Cell parameters; a bidirectional layer splits ``d_hidden`` evenly across directions."""
    cls = CELLS[kind]
    if not bidirectional:
        return cls.init(rng, d_in, d_hidden, bias)
    if d_hidden % 2:
        raise ValueError(f"bidirectional hidden size must be even, got {d_hidden}")
    return BiParams(cls.init(rng, d_in, d_hidden // 2, bias), cls.init(rng, d_in, d_hidden // 2, bias))


def _scan(xs: list[Tensor], kind: str, p: Params, reverse: bool) -> list[Tensor]:
    b = xs[0].shape[0]
    h = Tensor(np.zeros((b, p.hidden), dtype=xs[0].dtype))
    c = h
    order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    out: list[Tensor] = [None] * len(xs)
    for t in order:
        if kind == "GRU":
            h = gru_step(xs[t], h, p)
        elif kind == "LSTM":
            h, c = lstm_step(xs[t], (h, c), p)
        else:
            h = rnn_step(xs[t], h, p)
        out[t] = h
    return out


def run_recurrent(x: Tensor, kind: str, bidirectional: bool, params) -> tuple[Tensor, Tensor]:
    """Scan ``x [b, n, d_in]`` from a zero state.

    Returns per-position states ``[b, n, H]`` and the final state ``[b, H]``.
    For a bidirectional layer each position concatenates the forward and the
    backward state, and the final state is the forward state after position n
    joined with the backward state after position 1.
    """
    if x.ndim != 3 or x.shape[1] == 0:
        raise ShapeError(f"run_recurrent needs a non-empty [b, n, d] input, got {x.shape}")
    xs = [T.select(x, t, axis=1) for t in range(x.shape[1])]
    if not bidirectional:
        states = _scan(xs, kind, params, reverse=False)
        return T.stack(states, axis=1), states[-1]
    fwd = _scan(xs, kind, params.forward, reverse=False)
    bwd = _scan(xs, kind, params.backward, reverse=True)
    per_pos = [T.concat([f, b], axis=-1) for f, b in zip(fwd, bwd)]
    return T.stack(per_pos, axis=1), T.concat([fwd[-1], bwd[0]], axis=-1)


# -- additive attention pooling -------------------------------------------------------


@dataclass
class AttentionPoolParams(Params):
    w: Tensor
    b: Tensor
    v: Tensor  # [d_att, 1]

    @classmethod
    def init(cls, rng: Rng, d: int, d_att: int | None = None):
        d_att = d_att or d
        return cls(init_weight(rng, d, d_att), zeros(d_att), init_weight(rng, d_att, 1))


def attention_weights(states: Tensor, p: AttentionPoolParams) -> Tensor:
    """Softmax over positions of ``v . tanh(W s + b)``; shape ``[b, n]``."""
    b, n, _ = states.shape
    scores = T.matmul(T.tanh(linear(states, p.w, p.b)), p.v)
    return T.softmax(T.reshape(scores, (b, n)), axis=-1)


def attention_pool(states: Tensor, p: AttentionPoolParams) -> Tensor:
    """Convex combination of the rows of ``states [b, n, d]`` -> ``[b, d]``."""
    b, n, d = states.shape
    alpha = attention_weights(states, p)
    return T.reshape(T.matmul(T.reshape(alpha, (b, 1, n)), states), (b, d))


def attention_scale(x: Tensor, p: AttentionPoolParams) -> Tensor:
    """Reweight each position by ``n * alpha`` (uniform weights leave ``x`` unchanged).

    This is the placement used when attention comes before the recurrent layer.
    """
    b, n, d = x.shape
    alpha = T.scale(attention_weights(x, p), float(n))
    return T.mul(x, T.broadcast_to(T.reshape(alpha, (b, n, 1)), (b, n, d)))


# -- classification head ---------------------------------------------------------------


@dataclass
class HeadParams(Params):
    w: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng: Rng, d: int, n_classes: int = 2):
        return cls(init_weight(rng, d, n_classes), zeros(n_classes))


def classify_head(h: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Linear layer followed by log-softmax over the classes."""
    return T.log_softmax(linear(h, w, bias), axis=-1)


def predict(log_probs: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties go to class 0."""
    return np.argmax(np.asarray(log_probs), axis=-1)
