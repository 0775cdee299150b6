"""Dense tensors with tape-based reverse-mode automatic differentiation.

Operations are recorded only while a :class:`Tape` is active::

    with Tape() as tape:
        loss = (x * x).sum()
    tape.backward(loss)

Outside a tape every operation is a plain numpy computation. Binary
elementwise operations broadcast only by leading-1 expansion: after
dropping leading size-1 axes, one shape must be a suffix of the other.
Anything richer has to go through :func:`expand` explicitly.
"""

from __future__ import annotations

import threading

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, DomainError, NumericalError

DEFAULT_DTYPE = np.float64

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class _Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of the primitive operations of one computation.

    A tape belongs to the thread that entered it.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape exited out of order")
        stack.pop()
        return False

    def _record(self, node):
        self.nodes.append(node)

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf on the tape.

        Leaves that requires_grad but are not reachable from ``loss`` get a
        zero gradient buffer if they had none.
        """
        if loss.data.size != 1 or loss.data.ndim > 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for node in reversed(self.nodes):
            for t in node.inputs:
                if t.requires_grad and t._node is None:
                    leaves[id(t)] = t
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if not np.isfinite(gi).all():
                    raise NumericalError(f"non-finite gradient flowing out of {node.op}")
                if t._node is None:
                    if t.grad is None:
                        t.grad = np.array(gi, dtype=t.data.dtype, copy=True)
                    else:
                        t.grad += gi
                else:
                    key = id(t)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
        for t in leaves.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
        if loss._node is None and loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0


class Tensor:
    """n-dimensional real array that can take part in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "_tape")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.array(data, dtype=dtype or _infer_dtype(data), copy=True)
        if not np.all(np.isfinite(arr)):
            raise NumericalError("tensor data contains NaN or infinity")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None
        self._tape = None

    @classmethod
    def _wrap(cls, arr):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._node = None
        t._tape = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None if self.grad is None else np.zeros_like(self.data)

    def detach(self):
        return Tensor._wrap(self.data)

    def backward(self):
        if self._tape is None:
            raise ContractError("tensor was not produced on an active tape")
        self._tape.backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    # operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return hadamard(self, other)

    def __rmul__(self, other):
        return hadamard(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    __array_ufunc__ = None


def _infer_dtype(data):
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return data.dtype
    return DEFAULT_DTYPE


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NumericalError(f"{op} produced a non-finite value")


def _result(data, inputs, backward, op):
    _check_finite(data, op)
    out = Tensor._wrap(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = _Node(op, inputs, out, backward)
        out._tape = tape
        tape._record(out._node)
    return out


def _strip_leading_ones(shape):
    i = 0
    while i < len(shape) and shape[i] == 1:
        i += 1
    return shape[i:]


def broadcast_shape(a, b):
    """Result shape of a binary op under leading-1 expansion."""
    if a == b:
        return a
    sa, sb = _strip_leading_ones(a), _strip_leading_ones(b)
    if len(sa) <= len(b) and tuple(b[len(b) - len(sa):]) == sa:
        return (1,) * (len(a) - len(b)) + tuple(b)
    if len(sb) <= len(a) and tuple(a[len(a) - len(sb):]) == sb:
        return (1,) * (len(b) - len(a)) + tuple(a)
    raise DimensionError(f"shapes {a} and {b} are not broadcast-compatible")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    core = _strip_leading_ones(shape)
    extra = g.ndim - len(core)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g.reshape(shape)


def _binary_operands(a, b):
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    broadcast_shape(a.shape, b.shape)
    return a, b


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = _binary_operands(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _binary_operands(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def hadamard(a, b):
    a, b = _binary_operands(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "hadamard")


def scale(x, c):
    x = as_tensor(x)
    c = float(c)

    def backward(g):
        return (g * c,)

    return _result(x.data * c, (x,), backward, "scale")


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return _result(y, (x,), backward, "tanh")


def _sigmoid_np(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    x = as_tensor(x)
    y = _sigmoid_np(np.asarray(x.data))

    def backward(g):
        return (g * y * (1.0 - y),)

    return _result(y, (x,), backward, "sigmoid")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), backward, "relu")


def exp(x):
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.data)

    def backward(g):
        return (g * y,)

    return _result(y, (x,), backward, "exp")


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of a nonpositive value")
    y = np.log(x.data)

    def backward(g):
        return (g / x.data,)

    return _result(y, (x,), backward, "log")


def tabs(x):
    x = as_tensor(x)
    s = np.sign(x.data)

    def backward(g):
        return (g * s,)

    return _result(np.abs(x.data), (x,), backward, "abs")


def clip(x, lo, hi):
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        return (g * inside,)

    return _result(np.clip(x.data, lo, hi), (x,), backward, "clip")


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "exp": exp, "log": log, "abs": tabs}
_BINARY = {"add": add, "sub": sub, "hadamard": hadamard}


def elementwise(op, *args):
    """Dispatch an elementwise op by name (``scale`` takes a tensor and a float)."""
    if op in _UNARY:
        (x,) = args
        return _UNARY[op](x)
    if op in _BINARY:
        a, b = args
        return _BINARY[op](a, b)
    if op == "scale":
        x, c = args
        return scale(x, c)
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b):
    """``a @ b`` for ``a`` of shape (..., k) or (..., m, k) and ``b`` (k, n) or (k,)."""
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    if a.ndim < 1 or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    k = b.shape[0]

    if b.ndim == 2:
        n = b.shape[1]

        def backward(g):
            ga = g @ b.data.T if a.requires_grad else None
            gb = None
            if b.requires_grad:
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            return ga, gb
    else:

        def backward(g):
            ga = g[..., None] * b.data if a.requires_grad else None
            gb = a.data.reshape(-1, k).T @ g.reshape(-1) if b.requires_grad else None
            return ga, gb

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def tsum(x, axis=None):
    x = as_tensor(x)
    y = np.sum(x.data, axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _result(np.asarray(y), (x,), backward, "sum")


def mean(x, axis=None):
    x = as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    return scale(tsum(x, axis), 1.0 / n)


def softmax(x, axis=-1):
    """Numerically stable softmax along ``axis``."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DimensionError(f"softmax over an empty axis (shape {x.shape})")
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _result(y, (x,), backward, "softmax")


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x, shape):
    x = as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None

    def backward(g):
        return (g.reshape(x.shape),)

    return _result(y, (x,), backward, "reshape")


def transpose(x, axes=None):
    x = as_tensor(x)
    y = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return _result(y, (x,), backward, "transpose")


def swapaxes(x, a1, a2):
    axes = list(range(as_tensor(x).ndim))
    axes[a1], axes[a2] = axes[a2], axes[a1]
    return transpose(x, tuple(axes))


def getitem(x, idx):
    x = as_tensor(x)
    y = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _result(np.array(y), (x,), backward, "getitem")


def expand(x, axis, size):
    """Insert a new axis at ``axis`` and repeat ``x`` ``size`` times along it."""
    x = as_tensor(x)
    y = np.repeat(np.expand_dims(x.data, axis), size, axis=axis)

    def backward(g):
        return (g.sum(axis=axis),)

    return _result(y, (x,), backward, "expand")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(y, tuple(tensors), backward, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(y, tuple(tensors), backward, "stack")


# ---------------------------------------------------------------------------
# fused primitives backed by the hot kernels


def lstm_sequence(xs, W, U, b, h0, c0):
    """Fused LSTM over full sequences.

    ``xs`` (N, T, D); ``W`` (4H, D) and ``U`` (4H, H) stack the forget,
    input, output and candidate blocks; ``b`` (4H,); ``h0``/``c0`` (N, H).
    Returns the hidden states (N, T, H).
    """
    xs, W, U, b, h0, c0 = (as_tensor(t) for t in (xs, W, U, b, h0, c0))
    N, T, D = xs.shape
    G, H = U.shape
    if W.shape != (G, D) or b.shape != (G,) or G != 4 * H:
        raise DimensionError(f"LSTM weights {W.shape}, {U.shape}, {b.shape} do not fit input {xs.shape}")
    if h0.shape != (N, H) or c0.shape != (N, H):
        raise DimensionError(f"LSTM initial state {h0.shape}/{c0.shape}, expected {(N, H)}")
    if T == 0:
        raise DimensionError("LSTM over an empty sequence")
    xw = (xs.data.reshape(N * T, D) @ W.data.T + b.data).reshape(N, T, G)
    hs, cs, gates = kernels.lstm_forward(xw, U.data, h0.data, c0.data)

    def backward(g):
        dxw, dh0, dc0 = kernels.lstm_backward(np.ascontiguousarray(g), U.data, c0.data, cs, gates)
        dz = dxw.reshape(N * T, G)
        h_prev = np.concatenate([h0.data[:, None, :], hs[:, :-1, :]], axis=1).reshape(N * T, H)
        dxs = (dz @ W.data).reshape(N, T, D) if xs.requires_grad else None
        dW = dz.T @ xs.data.reshape(N * T, D) if W.requires_grad else None
        dU = dz.T @ h_prev if U.requires_grad else None
        db = dz.sum(axis=0) if b.requires_grad else None
        return dxs, dW, dU, db, dh0, dc0

    return _result(hs, (xs, W, U, b, h0, c0), backward, "lstm_sequence")


def conv1d(x, K, bias, stride=1):
    """Valid 1D cross-correlation: ``x`` (N, T, C), ``K`` (nk, ks, C) -> (N, T', nk)."""
    x, K, bias = (as_tensor(t) for t in (x, K, bias))
    if x.ndim != 3 or K.ndim != 3 or x.shape[2] != K.shape[2] or bias.shape != (K.shape[0],):
        raise DimensionError(f"conv1d shape mismatch: input {x.shape}, kernels {K.shape}, bias {bias.shape}")
    if stride < 1:
        raise DimensionError(f"conv1d stride must be positive, got {stride}")
    if x.shape[1] < K.shape[1]:
        raise DimensionError(f"conv1d input length {x.shape[1]} shorter than kernel size {K.shape[1]}")
    y = kernels.conv1d_forward(x.data, K.data, bias.data, stride)

    def backward(g):
        return kernels.conv1d_backward(np.ascontiguousarray(g), x.data, K.data, stride)

    return _result(np.asarray(y, dtype=x.dtype), (x, K, bias), backward, "conv1d")


# ---------------------------------------------------------------------------


def backward(loss: Tensor):
    """Run reverse mode from ``loss`` on the tape that produced it."""
    loss.backward()


def numerical_gradient(f, arrays, h=1e-5):
    """Central-difference gradient of scalar ``f()`` w.r.t. each array in place."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = arr[i]
            arr[i] = orig + h
            fp = f()
            arr[i] = orig - h
            fm = f()
            arr[i] = orig
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def gradient_error(analytic, numeric):
    """Max of ``|a - n| / max(1, |a|)`` over all entries."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(a)))))
    return worst
