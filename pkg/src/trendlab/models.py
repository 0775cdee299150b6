"""The five classifier families and their checkpoint format.

Kinds: ``mlp``, ``cnn1d``, ``stacked_lstm``, ``attention`` and
``weighted_attention``. The two attention kinds share one architecture:
factor and time attention are computed on the raw window, their outer
product reweights the window cell by cell, and the result feeds a stacked
LSTM followed by dense layers. They differ only in the loss bound at
training time.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as tl
from .errors import ConfigurationError, DimensionError, ParseError
from .layers import Conv1DLayer, DecoderAttention, DenseLayer, LSTMCell, SelfAttention
from .tensor import Tensor

KINDS = ("mlp", "cnn1d", "stacked_lstm", "attention", "weighted_attention")
ATTENTION_KINDS = ("attention", "weighted_attention")
PLACEMENTS = ("pre", "pre+decoder")
CKPT_MAGIC = b"TRENDLAB-CKPT v1\n"

DOWN, UP = "down", "up"


@dataclass
class ModelConfig:
    kind: str
    lookback: int
    n_factors: int
    mlp_hidden: tuple = (64, 64, 64)
    conv_layers: tuple = ((3, 32), (3, 64))
    conv_stride: int = 1
    cnn_hidden: tuple = (64, 64)
    lstm_hidden: int = 64
    lstm_layers: int = 2
    dense_hidden: tuple = (64,)
    attention_dim: int = 32
    attention_placement: str = "pre"
    dropout: float = 0.1
    seed: int = 0
    precision: str = "float64"

    def __post_init__(self):
        self.mlp_hidden = tuple(int(h) for h in self.mlp_hidden)
        self.conv_layers = tuple((int(k), int(n)) for k, n in self.conv_layers)
        self.cnn_hidden = tuple(int(h) for h in self.cnn_hidden)
        self.dense_hidden = tuple(int(h) for h in self.dense_hidden)

    def problems(self):
        bad = []
        if self.kind not in KINDS:
            bad.append(f"kind={self.kind!r} (expected one of {', '.join(KINDS)})")
        for name in ("lookback", "n_factors"):
            if int(getattr(self, name)) < 1:
                bad.append(f"{name}={getattr(self, name)} (must be >= 1)")
        if not 0.0 <= self.dropout < 1.0:
            bad.append(f"dropout={self.dropout} (must lie in [0, 1))")
        if self.precision not in ("float64", "float32"):
            bad.append(f"precision={self.precision!r}")
        if self.kind == "mlp" and (not self.mlp_hidden or min(self.mlp_hidden) < 1):
            bad.append(f"mlp_hidden={self.mlp_hidden}")
        if self.kind == "cnn1d":
            if not self.conv_layers or any(k < 1 or n < 1 for k, n in self.conv_layers):
                bad.append(f"conv_layers={self.conv_layers}")
            elif self.conv_stride < 1:
                bad.append(f"conv_stride={self.conv_stride}")
            else:
                T = self.lookback
                for k, _ in self.conv_layers:
                    T = (T - k) // self.conv_stride + 1 if T >= k else 0
                if T < 1:
                    bad.append(f"conv_layers={self.conv_layers} (lookback {self.lookback} too short)")
            if any(h < 1 for h in self.cnn_hidden):
                bad.append(f"cnn_hidden={self.cnn_hidden}")
        if self.kind in ("stacked_lstm",) + ATTENTION_KINDS:
            if self.lstm_hidden < 1:
                bad.append(f"lstm_hidden={self.lstm_hidden}")
            if self.lstm_layers < 1:
                bad.append(f"lstm_layers={self.lstm_layers}")
        if self.kind in ATTENTION_KINDS:
            if any(h < 1 for h in self.dense_hidden):
                bad.append(f"dense_hidden={self.dense_hidden}")
            if self.attention_placement not in PLACEMENTS:
                bad.append(f"attention_placement={self.attention_placement!r}")
            elif self.attention_placement == "pre+decoder":
                if self.lstm_layers < 2:
                    bad.append("lstm_layers (decoder attention needs >= 2)")
                if self.attention_dim < 1:
                    bad.append(f"attention_dim={self.attention_dim}")
        return bad

    def validate(self):
        bad = self.problems()
        if bad:
            raise ConfigurationError("invalid model config: " + "; ".join(bad))
        return self

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [list(x) if isinstance(x, tuple) else x for x in v]
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown model config fields: {', '.join(sorted(extra))}")
        return cls(**d)

    @classmethod
    def toy(cls, kind, lookback=4, n_factors=3, hidden=5, **kw):
        """Small widths everywhere; two size-2 convolutions so p=4 fits."""
        base = dict(
            mlp_hidden=(hidden,) * 3, conv_layers=((2, hidden), (2, hidden)), cnn_hidden=(hidden,) * 2,
            lstm_hidden=hidden, dense_hidden=(hidden,), attention_dim=hidden, dropout=0.0,
        )
        base.update(kw)
        return cls(kind, lookback, n_factors, **base)


@dataclass
class AttentionTrace:
    factor_alpha: np.ndarray
    time_alpha: np.ndarray
    anchor_date: object = None


class Model:
    """A built classifier. ``input_scale`` multiplies windows before the first layer."""

    def __init__(self, config: ModelConfig):
        self.config = config.validate()
        self.input_scale = 1.0
        rng = np.random.default_rng(config.seed)
        dt = config.dtype
        p, F, c = config.lookback, config.n_factors, config
        self.layers = {}
        if c.kind == "mlp":
            n = p * F
            for i, h in enumerate(c.mlp_hidden):
                self.layers[f"dense{i}"] = DenseLayer(n, h, "relu", rng, dt)
                n = h
            self.layers["out"] = DenseLayer(n, 2, "none", rng, dt)
        elif c.kind == "cnn1d":
            ch, T = F, p
            for i, (k, nk) in enumerate(c.conv_layers):
                self.layers[f"conv{i}"] = Conv1DLayer(ch, nk, k, c.conv_stride, "relu", rng, dt)
                ch, T = nk, (T - k) // c.conv_stride + 1
            n = ch * T
            for i, h in enumerate(c.cnn_hidden):
                self.layers[f"dense{i}"] = DenseLayer(n, h, "relu", rng, dt)
                n = h
            self.layers["out"] = DenseLayer(n, 2, "none", rng, dt)
        else:
            if c.kind in ATTENTION_KINDS:
                self.layers["factor_att"] = SelfAttention(p, "factor", rng, dt)
                self.layers["time_att"] = SelfAttention(F, "time", rng, dt)
            n = F
            for i in range(c.lstm_layers):
                if i == 1 and c.kind in ATTENTION_KINDS and c.attention_placement == "pre+decoder":
                    self.layers["decoder_att"] = DecoderAttention(c.lstm_hidden, c.lstm_hidden, c.attention_dim, rng, dt)
                    n = 2 * c.lstm_hidden
                self.layers[f"lstm{i}"] = LSTMCell(n, c.lstm_hidden, rng, dt)
                n = c.lstm_hidden
            if c.kind in ATTENTION_KINDS:
                for i, h in enumerate(c.dense_hidden):
                    self.layers[f"dense{i}"] = DenseLayer(n, h, "relu", rng, dt)
                    n = h
            self.layers["out"] = DenseLayer(n, 2, "none", rng, dt)

    @property
    def kind(self):
        return self.config.kind

    @property
    def supports_attention(self):
        return self.kind in ATTENTION_KINDS

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for lname, layer in self.layers.items():
            for pname, t in layer.parameters().items():
                out[f"{lname}.{pname}"] = t
        return out

    def n_parameters(self):
        return sum(t.size for t in self.parameters().values())

    def zero_grad(self):
        for t in self.parameters().values():
            t.grad = None

    def _dropout(self, x, rng):
        rate = self.config.dropout
        if rng is None or rate <= 0:
            return x
        mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
        return x * mask

    def forward_batch(self, windows, dropout_rng=None):
        """Probabilities (N, 2) plus factor/time alphas (or ``None``) for a batch.

        Dropout is active only when ``dropout_rng`` is given.
        """
        c = self.config
        X = windows.data if isinstance(windows, Tensor) else np.asarray(windows)
        if X.ndim != 3 or X.shape[1:] != (c.lookback, c.n_factors):
            raise DimensionError(f"expected windows (N, {c.lookback}, {c.n_factors}), got {X.shape}")
        x = Tensor._wrap(np.ascontiguousarray(X * self.input_scale, dtype=c.dtype))
        N = X.shape[0]
        L = self.layers
        alpha_f = alpha_t = None
        if c.kind == "mlp":
            h = tl.reshape(x, (N, c.lookback * c.n_factors))
            for i in range(len(c.mlp_hidden)):
                h = self._dropout(L[f"dense{i}"](h), dropout_rng)
        elif c.kind == "cnn1d":
            h = x
            for i in range(len(c.conv_layers)):
                h = L[f"conv{i}"](h)
            h = tl.reshape(h, (N, h.shape[1] * h.shape[2]))
            for i in range(len(c.cnn_hidden)):
                h = self._dropout(L[f"dense{i}"](h), dropout_rng)
        else:
            h = x
            if c.kind in ATTENTION_KINDS:
                _, fa = L["factor_att"](x)
                _, ta = L["time_att"](x)
                weights = tl.expand(ta, 2, c.n_factors) * tl.expand(fa, 1, c.lookback)
                h = x * weights
                alpha_f, alpha_t = fa.data, ta.data
            for i in range(c.lstm_layers):
                if i == 1 and "decoder_att" in L:
                    h = self._decode(L["decoder_att"], L["lstm1"], h)
                else:
                    h = L[f"lstm{i}"](h)
                if i < c.lstm_layers - 1:
                    h = self._dropout(h, dropout_rng)
            h = self._dropout(h[:, -1, :], dropout_rng)
            if c.kind in ATTENTION_KINDS:
                for i in range(len(c.dense_hidden)):
                    h = self._dropout(L[f"dense{i}"](h), dropout_rng)
        probs = tl.softmax(L["out"](h), axis=-1)
        return probs, alpha_f, alpha_t

    @staticmethod
    def _decode(att, cell, hs):
        N, T, _ = hs.shape
        s, cstate = cell.zero_state(N)
        out = []
        for t in range(T):
            ctx, _ = att(hs, s)
            s, cstate = cell.step(tl.concat([hs[:, t, :], ctx], axis=1), s, cstate)
            out.append(s)
        return tl.stack(out, axis=1)

    def predict_proba(self, windows, batch_size=256):
        X = np.asarray(windows)
        out = [self.forward_batch(X[i : i + batch_size])[0].data for i in range(0, len(X), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, 2))

    def state_arrays(self):
        return {k: t.data for k, t in self.parameters().items()}

    def load_state_arrays(self, arrays):
        params = self.parameters()
        if set(arrays) != set(params):
            raise ConfigurationError("parameter names do not match the model config")
        for k, t in params.items():
            a = np.asarray(arrays[k])
            if a.shape != t.shape:
                raise DimensionError(f"parameter {k}: stored shape {a.shape}, model expects {t.shape}")
            t.data = np.array(a, dtype=t.dtype, copy=True)
            t.grad = None


def build(config: ModelConfig) -> Model:
    return Model(config)


def forward(model: Model, window):
    """Single window (p, F) -> ``(probabilities, trace or None)``."""
    W = np.asarray(window.data if isinstance(window, Tensor) else window)
    if W.ndim != 2:
        raise DimensionError(f"forward expects one (p, F) window, got {W.shape}")
    probs, fa, ta = model.forward_batch(W[None])
    trace = AttentionTrace(fa[0].copy(), ta[0].copy()) if fa is not None else None
    return probs.data[0], trace


def label_from_probabilities(probs):
    probs = np.asarray(probs)
    return UP if probs[..., 1] >= probs[..., 0] else DOWN


def labels_from_probabilities(probs):
    probs = np.asarray(probs)
    return np.where(probs[:, 1] >= probs[:, 0], UP, DOWN)


def predict_label(model: Model, window):
    probs, _ = forward(model, window)
    return label_from_probabilities(probs)


# ---------------------------------------------------------------------------
# checkpoint container


def save_checkpoint(model: Model, path, extra=None):
    """Write config, buffers and raw little-endian parameter blobs."""
    params = model.parameters()
    entries, blobs, offset = [], [], 0
    for name in sorted(params):
        arr = np.array(params[name].data, order="C")  # ascontiguousarray would turn 0-d into 1-d
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append([name, arr.dtype.str.lstrip("<>|="), list(arr.shape), offset, len(raw)])
        blobs.append(raw)
        offset += len(raw)
    meta = {
        "config": model.config.to_dict(),
        "buffers": {"input_scale": model.input_scale},
        "params": entries,
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(json.dumps(meta, sort_keys=True).encode("utf-8") + b"\n")
        for raw in blobs:
            fh.write(raw)


def read_checkpoint(path):
    """Return ``(model, extra)`` restored bit-exactly from ``path``."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.readline() != CKPT_MAGIC:
            raise ParseError("not a trendlab checkpoint", path, 1)
        try:
            meta = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"bad checkpoint metadata: {exc}", path, 2) from None
        body = fh.read()
    model = Model(ModelConfig.from_dict(meta["config"]))
    model.input_scale = float(meta["buffers"]["input_scale"])
    arrays = {}
    for name, dtype, shape, offset, nbytes in meta["params"]:
        chunk = body[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise ParseError(f"truncated blob for {name}", path)
        arrays[name] = np.frombuffer(chunk, dtype=np.dtype(dtype).newbyteorder("<")).reshape(shape)
    model.load_state_arrays(arrays)
    return model, meta.get("extra", {})


def load_checkpoint(path) -> Model:
    return read_checkpoint(path)[0]
