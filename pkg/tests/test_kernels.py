"""The compiled kernels and the numpy fallback must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

from trendlab import kernels

from oracles import naive_conv1d

compiled = pytest.mark.skipif(kernels.compiled_backend is None, reason="compiled extension not built")


def lstm_inputs(rng, N=3, T=6, H=4):
    xw = rng.normal(size=(N, T, 4 * H))
    U = rng.normal(scale=0.5, size=(4 * H, H))
    h0, c0 = rng.normal(size=(N, H)), rng.normal(size=(N, H))
    return xw, U, h0, c0


def test_backends_listed():
    names = kernels.available_backends()
    assert "python" in names
    assert kernels.BACKEND in names
    assert kernels.get_backend("python") is kernels.python_backend
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


@compiled
@pytest.mark.parametrize("seed", range(5))
def test_lstm_backends_agree(seed):
    rng = np.random.default_rng(seed)
    xw, U, h0, c0 = lstm_inputs(rng, N=1 + seed, T=2 + seed, H=3 + seed)
    cy, py = kernels.compiled_backend, kernels.python_backend
    out_c, out_p = cy.lstm_forward(xw, U, h0, c0), py.lstm_forward(xw, U, h0, c0)
    for a, b in zip(out_c, out_p):
        assert np.max(np.abs(np.asarray(a) - b)) < 1e-13
    hs, cs, gates = out_p
    dhs = rng.normal(size=hs.shape)
    for a, b in zip(cy.lstm_backward(dhs, U, c0, cs, gates), py.lstm_backward(dhs, U, c0, cs, gates)):
        assert np.max(np.abs(np.asarray(a) - b)) < 1e-12


@compiled
@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv_backends_agree(stride):
    rng = np.random.default_rng(stride)
    x, K, bias = rng.normal(size=(4, 11, 3)), rng.normal(size=(5, 3, 3)), rng.normal(size=5)
    cy, py = kernels.compiled_backend, kernels.python_backend
    yc, yp = np.asarray(cy.conv1d_forward(x, K, bias, stride)), py.conv1d_forward(x, K, bias, stride)
    assert np.max(np.abs(yc - yp)) < 1e-13
    g = rng.normal(size=yp.shape)
    for a, b in zip(cy.conv1d_backward(g, x, K, stride), py.conv1d_backward(g, x, K, stride)):
        assert np.max(np.abs(np.asarray(a) - b)) < 1e-12


@pytest.mark.parametrize("name", kernels.available_backends())
def test_each_backend_matches_naive_conv(name):
    be = kernels.get_backend(name)
    rng = np.random.default_rng(7)
    x, K, bias = rng.normal(size=(2, 9, 2)), rng.normal(size=(3, 4, 2)), rng.normal(size=3)
    y = np.asarray(be.conv1d_forward(x, K, bias, 2))
    for n in range(2):
        assert np.max(np.abs(y[n] - naive_conv1d(x[n].tolist(), K.tolist(), bias.tolist(), 2))) < 1e-12


def test_float32_uses_numpy_path():
    rng = np.random.default_rng(0)
    xw, U, h0, c0 = (a.astype(np.float32) for a in lstm_inputs(rng))
    hs, _, _ = kernels.lstm_forward(xw, U, h0, c0)
    assert hs.dtype == np.float32


def test_env_var_forces_fallback():
    code = "import trendlab.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, TRENDLAB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
