"""Pure numpy implementations of the fused hot kernels.

Every function here has an identically named, identically behaved twin in
the compiled ``_kernels`` extension. Gate blocks in the LSTM buffers are
ordered forget, input, output, candidate.
"""

import numpy as np

BACKEND = "python"


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_forward(xw, U, h0, c0):
    """Run the LSTM recurrence over a whole batch of sequences.

    Parameters
    ----------
    xw : ndarray (N, T, 4H)
        Input projections ``x_t W^T + b`` for every timestep.
    U : ndarray (4H, H)
        Stacked recurrent matrices.
    h0, c0 : ndarray (N, H)

    Returns
    -------
    hs, cs : ndarray (N, T, H)
    gates : ndarray (N, T, 4H)
        Activated gates, kept for the backward pass.
    """
    N, T, G = xw.shape
    H = G // 4
    hs = np.empty((N, T, H), dtype=xw.dtype)
    cs = np.empty((N, T, H), dtype=xw.dtype)
    gates = np.empty((N, T, G), dtype=xw.dtype)
    h, c = h0, c0
    Ut = U.T
    for t in range(T):
        z = xw[:, t, :] + h @ Ut
        a = gates[:, t, :]
        a[:, : 3 * H] = _sigmoid(z[:, : 3 * H])
        a[:, 3 * H :] = np.tanh(z[:, 3 * H :])
        f, i, o, g = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        c = f * c + i * g
        h = o * np.tanh(c)
        cs[:, t, :] = c
        hs[:, t, :] = h
    return hs, cs, gates


def lstm_backward(dhs, U, c0, cs, gates):
    """Back-propagate through :func:`lstm_forward`.

    Returns ``(dxw, dh0, dc0)``; the weight gradients follow from ``dxw`` by
    plain matrix products and are formed by the caller.
    """
    N, T, H = dhs.shape
    dxw = np.empty((N, T, 4 * H), dtype=dhs.dtype)
    dh = np.zeros((N, H), dtype=dhs.dtype)
    dc = np.zeros((N, H), dtype=dhs.dtype)
    for t in range(T - 1, -1, -1):
        a = gates[:, t, :]
        f, i, o, g = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        c_prev = cs[:, t - 1, :] if t > 0 else c0
        tc = np.tanh(cs[:, t, :])
        dh = dh + dhs[:, t, :]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = dxw[:, t, :]
        dz[:, :H] = dc * c_prev * f * (1.0 - f)
        dz[:, H : 2 * H] = dc * g * i * (1.0 - i)
        dz[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H :] = dc * i * (1.0 - g * g)
        dc = dc * f
        dh = dz @ U
    return dxw, dh, dc


def conv1d_forward(x, K, bias, stride):
    """Valid cross-correlation of ``K`` (nk, ks, C) over ``x`` (N, T, C)."""
    N, T, C = x.shape
    nk, ks, _ = K.shape
    Tout = (T - ks) // stride + 1
    idx = np.arange(Tout)[:, None] * stride + np.arange(ks)[None, :]
    cols = x[:, idx, :].reshape(N, Tout, ks * C)
    return cols @ K.reshape(nk, ks * C).T + bias


def conv1d_backward(g, x, K, stride):
    """Gradients of :func:`conv1d_forward` w.r.t. ``x``, ``K`` and the bias."""
    N, T, C = x.shape
    nk, ks, _ = K.shape
    Tout = g.shape[1]
    idx = np.arange(Tout)[:, None] * stride + np.arange(ks)[None, :]
    cols = x[:, idx, :].reshape(N * Tout, ks * C)
    g2 = g.reshape(N * Tout, nk)
    dK = (g2.T @ cols).reshape(nk, ks, C)
    db = g2.sum(axis=0)
    dcols = (g2 @ K.reshape(nk, ks * C)).reshape(N, Tout, ks, C)
    dx = np.zeros_like(x)
    for j in range(ks):
        dx[:, j : j + (Tout - 1) * stride + 1 : stride, :] += dcols[:, :, j, :]
    return dx, dK, db
