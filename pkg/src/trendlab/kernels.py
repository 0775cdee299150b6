"""Hot-kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy twins in ``_kernels_py`` are used. Setting ``TRENDLAB_PURE_PYTHON=1``
forces the fallback. Compiled kernels are float64 only, so float32 inputs
always take the numpy path.
"""

import os

import numpy as np

from . import _kernels_py as python_backend

compiled_backend = None
if os.environ.get("TRENDLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:
        compiled_backend = None

_active = compiled_backend or python_backend
BACKEND = _active.BACKEND


def available_backends():
    names = ["python"]
    if compiled_backend is not None:
        names.insert(0, "cython")
    return names


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active one)."""
    if name is None:
        return _active
    if name == "python":
        return python_backend
    if name == "cython":
        if compiled_backend is None:
            raise ImportError("compiled trendlab._kernels extension is not built")
        return compiled_backend
    raise ValueError(f"unknown kernel backend {name!r}")


def _pick(*arrays):
    if _active is python_backend:
        return python_backend
    if all(a.dtype == np.float64 for a in arrays):
        return _active
    return python_backend


def lstm_forward(xw, U, h0, c0):
    return _pick(xw, U, h0, c0).lstm_forward(xw, U, h0, c0)


def lstm_backward(dhs, U, c0, cs, gates):
    return _pick(dhs, U, c0, cs, gates).lstm_backward(dhs, U, c0, cs, gates)


def conv1d_forward(x, K, bias, stride):
    return _pick(x, K, bias).conv1d_forward(x, K, bias, stride)


def conv1d_backward(g, x, K, stride):
    return _pick(g, x, K).conv1d_backward(g, x, K, stride)
