import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import trendlab.tensor as tl
from trendlab.errors import DimensionError
from trendlab.layers import (Conv1DLayer, DecoderAttention, DenseLayer, LSTMCell, SelfAttention,
                             decoder_attention, dense_forward, lstm_sequence, lstm_step, self_attention)

from oracles import cell_lists, check_layer, naive_conv1d, scalar_lstm_step


def zero_params(layer):
    for p in layer.parameters().values():
        p.data[...] = 0.0


# -- dense -------------------------------------------------------------------------

def test_dense_identity():
    d = DenseLayer(3, 3)
    d.W.data[...] = np.eye(3)
    x = np.array([0.3, -1.0, 2.0])
    assert np.array_equal(dense_forward(d, x).data, x)


def test_dense_relu_hand_value():
    d = DenseLayer(2, 1, "relu")
    d.W.data[...] = [[1.0, 1.0]]
    d.b.data[...] = [-1.0]
    assert dense_forward(d, [0.3, 0.2]).data.tolist() == [0.0]


def test_dense_shape_error():
    with pytest.raises(DimensionError):
        DenseLayer(3, 2)(np.ones(4))


def test_dense_param_count():
    d = DenseLayer(80, 64)
    assert d.W.size + d.b.size == 5184


@pytest.mark.parametrize("act", ["none", "tanh", "sigmoid", "relu"])
def test_dense_grad(act):
    rng = np.random.default_rng(1)
    d = DenseLayer(4, 3, act, rng=rng)
    d.b.data[...] = rng.normal(size=3)
    x = tl.Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    assert check_layer(lambda: tl.tsum(tl.tanh(d(x))), [d.W, d.b, x]) < 1e-6


# -- conv1d ------------------------------------------------------------------------

def test_conv_averaging_kernel():
    c = Conv1DLayer(1, 1, 3)
    c.kernels.data[...] = 1.0 / 3.0
    y = c(np.array([[3.0], [6.0], [9.0], [12.0]])).data
    assert np.allclose(y.ravel(), [6.0, 9.0], atol=1e-14)


def test_conv_delta_kernel_gives_interior():
    c = Conv1DLayer(1, 1, 3)
    c.kernels.data[...] = np.array([0.0, 1.0, 0.0]).reshape(1, 3, 1)
    x = np.arange(7.0).reshape(7, 1)
    assert np.array_equal(c(x).data, x[1:-1])


def test_conv_is_cross_correlation():
    c = Conv1DLayer(1, 1, 2)
    c.kernels.data[...] = np.array([1.0, 0.0]).reshape(1, 2, 1)
    x = np.array([[1.0], [2.0], [3.0]])
    assert c(x).data.ravel().tolist() == [1.0, 2.0]


def test_conv_matches_naive_on_20x4():
    rng = np.random.default_rng(0)
    c = Conv1DLayer(4, 6, 3, rng=rng)
    c.bias.data[...] = rng.normal(size=6)
    x = rng.normal(size=(20, 4))
    ref = naive_conv1d(x.tolist(), c.kernels.data.tolist(), c.bias.data.tolist())
    assert np.max(np.abs(c(x).data - ref)) < 1e-12


@pytest.mark.parametrize("T,ks,stride,expected", [(10, 3, 1, 8), (10, 3, 2, 4), (10, 3, 3, 3), (3, 3, 1, 1)])
def test_conv_output_length(T, ks, stride, expected):
    c = Conv1DLayer(2, 1, ks, stride=stride)
    assert c.output_length(T) == expected
    assert c(np.zeros((T, 2))).shape == (expected, 1)


def test_conv_too_short():
    with pytest.raises(DimensionError):
        Conv1DLayer(1, 1, 3)(np.zeros((2, 1)))


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_grad(stride):
    rng = np.random.default_rng(stride)
    c = Conv1DLayer(3, 4, 3, stride=stride, activation="tanh", rng=rng)
    c.bias.data[...] = rng.normal(size=4)
    x = tl.Tensor(rng.normal(size=(2, 9, 3)), requires_grad=True)
    assert check_layer(lambda: tl.tsum(c(x) * c(x)), [c.kernels, c.bias, x]) < 1e-6


# -- LSTM ----------------------------------------------------------------------------

def test_lstm_zero_everything():
    cell = LSTMCell(3, 2)
    zero_params(cell)
    h, c = lstm_step(cell, np.zeros(3), np.zeros(2), np.zeros(2))
    assert np.array_equal(h.data, [0.0, 0.0]) and np.array_equal(c.data, [0.0, 0.0])


def test_lstm_zero_weights_half_cell():
    cell = LSTMCell(1, 1)
    zero_params(cell)
    h, c = lstm_step(cell, [0.7], [0.0], [1.0])
    assert c.data[0] == pytest.approx(0.5, abs=1e-15)
    assert h.data[0] == pytest.approx(0.5 * math.tanh(0.5), abs=1e-15)


@pytest.mark.parametrize("D,H", [(1, 1), (3, 2), (2, 4)])
def test_lstm_step_matches_scalar_reference(D, H):
    rng = np.random.default_rng(D * 10 + H)
    cell = LSTMCell(D, H, rng=rng)
    for g in "fioc":
        getattr(cell, f"b_{g}").data[...] = rng.normal(size=H)
    W, U, b = cell_lists(cell)
    x, h0, c0 = rng.normal(size=D), rng.normal(size=H), rng.normal(size=H)
    h, c = lstm_step(cell, x, h0, c0)
    rh, rc = scalar_lstm_step(W, U, b, x.tolist(), h0.tolist(), c0.tolist())
    assert np.max(np.abs(h.data - rh)) < 1e-12
    assert np.max(np.abs(c.data - rc)) < 1e-12


def test_lstm_step_shape_error():
    cell = LSTMCell(3, 2)
    with pytest.raises(DimensionError):
        lstm_step(cell, np.zeros(4), np.zeros(2), np.zeros(2))


def test_lstm_sequence_t1_is_step():
    rng = np.random.default_rng(2)
    cell = LSTMCell(3, 4, rng=rng)
    x = rng.normal(size=(1, 3))
    h, _ = lstm_step(cell, x[0], np.zeros(4), np.zeros(4))
    assert np.allclose(lstm_sequence(cell, x).data[0], h.data, atol=1e-15)


@pytest.mark.parametrize("fused", [True, False])
def test_lstm_sequence_matches_scalar_fold(fused):
    rng = np.random.default_rng(4)
    cell = LSTMCell(2, 3, rng=rng)
    for g in "fioc":
        getattr(cell, f"b_{g}").data[...] = rng.normal(size=3)
    xs, h0, c0 = rng.normal(size=(6, 2)), rng.normal(size=3), rng.normal(size=3)
    hs = lstm_sequence(cell, xs, h0, c0, fused=fused).data
    W, U, b = cell_lists(cell)
    h, c = h0.tolist(), c0.tolist()
    for t in range(6):
        h, c = scalar_lstm_step(W, U, b, xs[t].tolist(), h, c)
        assert np.max(np.abs(hs[t] - h)) < 1e-12


def test_lstm_sequence_order_sensitive():
    rng = np.random.default_rng(8)
    cell = LSTMCell(2, 3, rng=rng)
    xs = rng.normal(size=(5, 2))
    a = lstm_sequence(cell, xs).data[-1]
    b = lstm_sequence(cell, xs[::-1].copy()).data[-1]
    assert np.max(np.abs(a - b)) > 1e-6


def test_lstm_sequence_empty():
    with pytest.raises(DimensionError):
        lstm_sequence(LSTMCell(2, 3), np.zeros((0, 2)))


@pytest.mark.parametrize("fused", [True, False])
def test_lstm_sequence_grad_5_steps(fused):
    rng = np.random.default_rng(6)
    cell = LSTMCell(3, 4, rng=rng)
    xs = tl.Tensor(rng.normal(size=(2, 5, 3)), requires_grad=True)
    h0 = tl.Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    c0 = tl.Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    w = rng.normal(size=(2, 5, 4))
    params = list(cell.parameters().values()) + [xs, h0, c0]
    assert check_layer(lambda: tl.tsum(lstm_sequence(cell, xs, h0, c0, fused=fused) * w), params) < 1e-6


def test_fused_and_stepwise_grads_agree():
    rng = np.random.default_rng(9)
    cell = LSTMCell(3, 4, rng=rng)
    xs = rng.normal(size=(2, 5, 3))
    out = []
    for fused in (True, False):
        for p in cell.parameters().values():
            p.grad = None
        with tl.Tape() as t:
            loss = tl.tsum(tl.tanh(lstm_sequence(cell, xs, fused=fused)))
        t.backward(loss)
        out.append({k: p.grad.copy() for k, p in cell.parameters().items()})
    for k in out[0]:
        assert np.max(np.abs(out[0][k] - out[1][k])) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30))
def test_cell_state_bound(seed, T):
    rng = np.random.default_rng(seed)
    cell = LSTMCell(2, 3, rng=rng)
    for p in cell.parameters().values():
        p.data[...] = rng.normal(scale=3.0, size=p.shape)
    c0 = rng.normal(size=3)
    xs = rng.normal(scale=5.0, size=(T, 2))
    h, c = np.zeros(3), c0
    for t in range(T):
        h, c = lstm_step(cell, xs[t], h, c)
        assert np.all(np.abs(c.data) <= np.abs(c0) + (t + 1) + 1e-12)


# -- self attention ------------------------------------------------------------------

@pytest.mark.parametrize("axis", ["time", "factor"])
def test_self_attention_singleton(axis):
    x = np.random.default_rng(0).normal(size=(1, 3) if axis == "time" else (3, 1))
    att = SelfAttention(3, axis)
    c, alpha = self_attention(att, x)
    assert alpha.data.tolist() == [1.0]
    assert np.array_equal(c.data, x)


@pytest.mark.parametrize("axis,other", [("time", 3), ("factor", 5)])
def test_self_attention_zero_weights_uniform(axis, other):
    x = np.random.default_rng(1).normal(size=(5, 3))
    att = SelfAttention(other, axis)
    zero_params(att)
    c, alpha = att(x)
    n = 5 if axis == "time" else 3
    assert np.allclose(alpha.data, 1.0 / n, atol=1e-15)
    assert np.allclose(c.data, x / n, atol=1e-15)


def test_self_attention_scales_slices():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 3))
    c, alpha = SelfAttention(4, "factor", rng=rng)(x)
    assert np.allclose(c.data, x * alpha.data[None, :], atol=1e-15)
    c, alpha = SelfAttention(3, "time", rng=rng)(x)
    assert np.allclose(c.data, x * alpha.data[:, None], atol=1e-15)


def test_self_attention_normalized_1000_trials():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        T, D = rng.integers(1, 12, size=2)
        axis = "time" if rng.random() < 0.5 else "factor"
        att = SelfAttention(D if axis == "time" else T, axis, rng=rng)
        att.w.data[...] = rng.normal(scale=2.0, size=att.w.shape)
        _, alpha = att(rng.normal(scale=3.0, size=(T, D)))
        assert np.all(alpha.data >= 0) and abs(alpha.data.sum() - 1.0) <= 1e-6


def test_self_attention_shape_error():
    with pytest.raises(DimensionError):
        SelfAttention(4, "time")(np.zeros((5, 3)))
    with pytest.raises(ValueError):
        SelfAttention(4, "diagonal")


@pytest.mark.parametrize("axis", ["time", "factor"])
def test_self_attention_grad(axis):
    rng = np.random.default_rng(4)
    att = SelfAttention(3 if axis == "time" else 5, axis, rng=rng)
    att.w.data[...] = rng.normal(size=att.w.shape)
    att.b.data[...] = 0.3
    x = tl.Tensor(rng.normal(size=(2, 5, 3)), requires_grad=True)
    w = rng.normal(size=(2, 5, 3))

    def f():
        c, alpha = att(x)
        return tl.tsum(c * w) + tl.tsum(alpha * alpha)

    assert check_layer(f, [att.w, att.b, x]) < 1e-6


# -- decoder attention -----------------------------------------------------------------

def test_decoder_zero_v_uniform_mean():
    rng = np.random.default_rng(0)
    att = DecoderAttention(3, 4, 5, rng=rng)
    att.V_a.data[...] = 0.0
    hs = rng.normal(size=(6, 4))
    ctx, alpha = decoder_attention(att, hs, rng.normal(size=3))
    assert np.allclose(alpha.data, 1 / 6, atol=1e-15)
    assert np.allclose(ctx.data, hs.mean(axis=0), atol=1e-15)


def test_decoder_single_position():
    rng = np.random.default_rng(1)
    att = DecoderAttention(3, 4, 5, rng=rng)
    hs = rng.normal(size=(1, 4))
    ctx, alpha = att(hs, rng.normal(size=3))
    assert alpha.data.tolist() == [1.0]
    assert np.array_equal(ctx.data, hs[0])


def test_decoder_scores_hand_formula():
    rng = np.random.default_rng(2)
    att = DecoderAttention(3, 4, 5, rng=rng)
    for p in att.parameters().values():
        p.data[...] = rng.normal(size=p.shape)
    hs, s = rng.normal(size=(6, 4)), rng.normal(size=3)
    e = np.array([att.V_a.data @ np.tanh(att.W_a.data @ s + att.U_a.data @ h) for h in hs])
    a = np.exp(e - e.max()) / np.exp(e - e.max()).sum()
    ctx, alpha = att(hs, s)
    assert np.max(np.abs(alpha.data - a)) < 1e-14
    assert np.max(np.abs(ctx.data - a @ hs)) < 1e-14


def test_decoder_shape_error():
    with pytest.raises(DimensionError):
        DecoderAttention(3, 4, 5)(np.zeros((6, 3)), np.zeros(3))


def test_decoder_grad():
    rng = np.random.default_rng(3)
    att = DecoderAttention(3, 4, 5, rng=rng)
    for p in att.parameters().values():
        p.data[...] = rng.normal(size=p.shape)
    hs = tl.Tensor(rng.normal(size=(2, 6, 4)), requires_grad=True)
    s = tl.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    w = rng.normal(size=(2, 4))
    assert check_layer(lambda: tl.tsum(att(hs, s)[0] * w), [att.V_a, att.W_a, att.U_a, hs, s]) < 1e-6
