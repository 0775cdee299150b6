"""Trainable building blocks: dense, 1D convolution, LSTM and soft attention.

Every forward accepts either a single example or a batch with a leading
batch axis. Parameters are plain :class:`~trendlab.tensor.Tensor` leaves
with ``requires_grad=True``.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tl
from .errors import DimensionError
from .tensor import Tensor

ACTIVATIONS = {
    "none": lambda x: x,
    "tanh": tl.tanh,
    "relu": tl.relu,
    "sigmoid": tl.sigmoid,
}

ATTENTION_INIT = 0.05


def _param(arr, dtype):
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True, dtype=dtype)


def fan_in_uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def orthogonal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def _activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


class Layer:
    def parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in vars(self).items() if isinstance(v, Tensor)}


class DenseLayer(Layer):
    """``activation(W x + b)`` with ``W`` of shape (out, in)."""

    def __init__(self, n_in, n_out, activation="none", rng=None, dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        self.activation = activation
        _activation(activation)
        self.W = _param(fan_in_uniform(rng, (n_out, n_in), n_in), dtype)
        self.b = _param(np.zeros(n_out), dtype)

    @property
    def n_in(self):
        return self.W.shape[1]

    @property
    def n_out(self):
        return self.W.shape[0]

    def __call__(self, x):
        return dense_forward(self, x)


def dense_forward(layer: DenseLayer, x):
    x = tl.as_tensor(x, dtype=layer.W.dtype)
    if x.ndim < 1 or x.shape[-1] != layer.n_in:
        raise DimensionError(f"dense layer expects last axis {layer.n_in}, got input {x.shape}")
    return _activation(layer.activation)(tl.matmul(x, tl.transpose(layer.W)) + layer.b)


class Conv1DLayer(Layer):
    """Valid cross-correlation along time with kernels (n_kernels, size, channels)."""

    def __init__(self, in_channels, n_kernels, kernel_size, stride=1, activation="none",
                 rng=None, dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        if kernel_size < 1 or stride < 1 or n_kernels < 1:
            raise ValueError("kernel size, stride and kernel count must be positive")
        _activation(activation)
        self.stride = int(stride)
        self.activation = activation
        fan_in = kernel_size * in_channels
        self.kernels = _param(fan_in_uniform(rng, (n_kernels, kernel_size, in_channels), fan_in), dtype)
        self.bias = _param(np.zeros(n_kernels), dtype)

    @property
    def kernel_size(self):
        return self.kernels.shape[1]

    def output_length(self, T):
        return (T - self.kernel_size) // self.stride + 1

    def __call__(self, x):
        return conv1d_forward(self, x)


def conv1d_forward(layer: Conv1DLayer, x):
    x = tl.as_tensor(x, dtype=layer.kernels.dtype)
    single = x.ndim == 2
    if single:
        x = tl.reshape(x, (1,) + x.shape)
    y = tl.conv1d(x, layer.kernels, layer.bias, layer.stride)
    y = _activation(layer.activation)(y)
    return tl.reshape(y, y.shape[1:]) if single else y


_GATES = ("f", "i", "o", "c")


class LSTMCell(Layer):
    """LSTM unit with a forget gate; sigmoid gates, tanh candidate and output."""

    def __init__(self, n_in, n_hidden, rng=None, dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        for g in _GATES:
            setattr(self, f"W_{g}", _param(fan_in_uniform(rng, (n_hidden, n_in), n_in), dtype))
        for g in _GATES:
            setattr(self, f"U_{g}", _param(orthogonal(rng, n_hidden), dtype))
        for g in _GATES:
            setattr(self, f"b_{g}", _param(np.zeros(n_hidden), dtype))

    @property
    def n_in(self):
        return self.W_f.shape[1]

    @property
    def n_hidden(self):
        return self.W_f.shape[0]

    def zero_state(self, batch=None):
        shape = (self.n_hidden,) if batch is None else (batch, self.n_hidden)
        z = np.zeros(shape, dtype=self.W_f.dtype)
        return Tensor._wrap(z), Tensor._wrap(z.copy())

    def step(self, x_t, h_prev, c_prev):
        return lstm_step(self, x_t, h_prev, c_prev)

    def __call__(self, xs, h0=None, c0=None, fused=True):
        return lstm_sequence(self, xs, h0, c0, fused=fused)


def lstm_step(cell: LSTMCell, x_t, h_prev, c_prev):
    """One timestep built from primitive ops; returns ``(h_t, c_t)``."""
    dt = cell.W_f.dtype
    x_t, h_prev, c_prev = (tl.as_tensor(v, dtype=dt) for v in (x_t, h_prev, c_prev))
    H, D = cell.n_hidden, cell.n_in
    if x_t.shape[-1] != D or h_prev.shape[-1] != H or c_prev.shape != h_prev.shape \
            or x_t.shape[:-1] != h_prev.shape[:-1]:
        raise DimensionError(
            f"lstm_step expects x[..., {D}] and state[..., {H}], got {x_t.shape}, {h_prev.shape}, {c_prev.shape}")

    def pre(g):
        W, U, b = getattr(cell, f"W_{g}"), getattr(cell, f"U_{g}"), getattr(cell, f"b_{g}")
        return tl.matmul(x_t, tl.transpose(W)) + tl.matmul(h_prev, tl.transpose(U)) + b

    f = tl.sigmoid(pre("f"))
    i = tl.sigmoid(pre("i"))
    o = tl.sigmoid(pre("o"))
    c = f * c_prev + i * tl.tanh(pre("c"))
    h = o * tl.tanh(c)
    return h, c


def lstm_sequence(cell: LSTMCell, xs, h0=None, c0=None, fused=True):
    """All hidden states for ``xs`` of shape (T, D) or (N, T, D).

    ``fused=True`` runs the compiled/numpy sequence kernel; ``fused=False``
    folds :func:`lstm_step` left to right. Both give the same values.
    """
    xs = tl.as_tensor(xs, dtype=cell.W_f.dtype)
    single = xs.ndim == 2
    if single:
        xs = tl.reshape(xs, (1,) + xs.shape)
    if xs.ndim != 3 or xs.shape[2] != cell.n_in:
        raise DimensionError(f"lstm_sequence expects (T, {cell.n_in}) steps, got {xs.shape}")
    N, T, _ = xs.shape
    if T == 0:
        raise DimensionError("lstm_sequence over an empty sequence")
    zh, zc = cell.zero_state(N)
    h0 = zh if h0 is None else _batched(tl.as_tensor(h0, dtype=xs.dtype), single)
    c0 = zc if c0 is None else _batched(tl.as_tensor(c0, dtype=xs.dtype), single)
    if fused:
        W = tl.concat([getattr(cell, f"W_{g}") for g in _GATES], axis=0)
        U = tl.concat([getattr(cell, f"U_{g}") for g in _GATES], axis=0)
        b = tl.concat([getattr(cell, f"b_{g}") for g in _GATES], axis=0)
        hs = tl.lstm_sequence(xs, W, U, b, h0, c0)
    else:
        h, c, out = h0, c0, []
        for t in range(T):
            h, c = lstm_step(cell, xs[:, t, :], h, c)
            out.append(h)
        hs = tl.stack(out, axis=1)
    return tl.reshape(hs, hs.shape[1:]) if single else hs


def _batched(t, single):
    return tl.reshape(t, (1,) + t.shape) if single else t


class SelfAttention(Layer):
    """Soft attention over one axis of a (T, D) window.

    Scores are ``tanh(x_k . w + b)`` for each slice ``x_k`` along the attended
    axis, where ``w`` spans the other axis and ``b`` is a scalar. ``axis`` is
    ``"time"`` (rows) or ``"factor"`` (columns).
    """

    def __init__(self, n_other, axis="time", rng=None, dtype=np.float64):
        if axis not in ("time", "factor"):
            raise ValueError(f"attention axis must be 'time' or 'factor', got {axis!r}")
        rng = rng or np.random.default_rng(0)
        self.axis = axis
        self.w = _param(rng.uniform(-ATTENTION_INIT, ATTENTION_INIT, size=n_other), dtype)
        self.b = _param(np.zeros(()), dtype)

    def __call__(self, x):
        return self_attention(self, x)


def self_attention(att: SelfAttention, x):
    """Return ``(c, alpha)``: ``x`` with each attended slice scaled by its weight."""
    x = tl.as_tensor(x, dtype=att.w.dtype)
    single = x.ndim == 2
    if single:
        x = tl.reshape(x, (1,) + x.shape)
    if x.ndim != 3:
        raise DimensionError(f"self_attention expects (T, D) or (N, T, D), got {x.shape}")
    xv = tl.swapaxes(x, 1, 2) if att.axis == "factor" else x
    N, L, M = xv.shape
    if M != att.w.shape[0]:
        raise DimensionError(f"attention weight spans {att.w.shape[0]} entries, input slices have {M}")
    if L < 1:
        raise DimensionError("attention over an empty axis")
    e = tl.tanh(tl.matmul(xv, att.w) + att.b)
    alpha = tl.softmax(e, axis=-1)
    c = xv * tl.expand(alpha, 2, M)
    if att.axis == "factor":
        c = tl.swapaxes(c, 1, 2)
    if single:
        return tl.reshape(c, c.shape[1:]), tl.reshape(alpha, (L,))
    return c, alpha


class DecoderAttention(Layer):
    """Additive attention ``e_j = V_a . tanh(W_a s + U_a h_j)`` over encoder states."""

    def __init__(self, n_state, n_encoded, n_attn, rng=None, dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        u = lambda shape: rng.uniform(-ATTENTION_INIT, ATTENTION_INIT, size=shape)  # noqa: E731
        self.V_a = _param(u(n_attn), dtype)
        self.W_a = _param(u((n_attn, n_state)), dtype)
        self.U_a = _param(u((n_attn, n_encoded)), dtype)

    def __call__(self, hs, s_prev):
        return decoder_attention(self, hs, s_prev)


def decoder_attention(att: DecoderAttention, hs, s_prev):
    """Return ``(context, alpha)`` with ``context = sum_j alpha_j h_j``."""
    dt = att.V_a.dtype
    hs, s_prev = tl.as_tensor(hs, dtype=dt), tl.as_tensor(s_prev, dtype=dt)
    single = hs.ndim == 2
    if single:
        hs = tl.reshape(hs, (1,) + hs.shape)
        s_prev = tl.reshape(s_prev, (1,) + s_prev.shape)
    if hs.ndim != 3 or s_prev.ndim != 2 or hs.shape[0] != s_prev.shape[0] \
            or hs.shape[2] != att.U_a.shape[1] or s_prev.shape[1] != att.W_a.shape[1]:
        raise DimensionError(f"decoder_attention got encoder states {hs.shape} and decoder state {s_prev.shape}")
    N, T, H = hs.shape
    if T < 1:
        raise DimensionError("decoder attention over zero encoder positions")
    ws = tl.expand(tl.matmul(s_prev, tl.transpose(att.W_a)), 1, T)
    uh = tl.matmul(hs, tl.transpose(att.U_a))
    e = tl.matmul(tl.tanh(ws + uh), att.V_a)
    alpha = tl.softmax(e, axis=-1)
    context = tl.tsum(hs * tl.expand(alpha, 2, H), axis=1)
    if single:
        return tl.reshape(context, (H,)), tl.reshape(alpha, (T,))
    return context, alpha
