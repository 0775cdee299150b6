# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``.

Float64 only. Arrays are C-contiguous row-major; BLAS is column-major, so
every product ``C = A @ B`` is issued as ``C^T = B^T @ A^T``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND = "cython"


cdef inline double _sigmoid(double z) noexcept nogil:
    cdef double e
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def lstm_forward(xw, U, h0, c0):
    xw = np.ascontiguousarray(xw, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    cdef Py_ssize_t N = xw.shape[0], T = xw.shape[1], G = xw.shape[2]
    cdef Py_ssize_t H = G // 4
    hs_a = np.empty((N, T, H), dtype=np.float64)
    cs_a = np.empty((N, T, H), dtype=np.float64)
    gates_a = np.empty((N, T, G), dtype=np.float64)
    z_a = np.empty((N, G), dtype=np.float64)
    h_a = np.ascontiguousarray(h0, dtype=np.float64).copy()
    c_a = np.ascontiguousarray(c0, dtype=np.float64).copy()

    cdef double[:, :, ::1] xwv = xw
    cdef double[:, ::1] Uv = U
    cdef double[:, :, ::1] hs = hs_a
    cdef double[:, :, ::1] cs = cs_a
    cdef double[:, :, ::1] gates = gates_a
    cdef double[:, ::1] z = z_a
    cdef double[:, ::1] h = h_a
    cdef double[:, ::1] c = c_a

    cdef Py_ssize_t n, t, k
    cdef double f, i, o, g, cn, hn
    cdef int m_ = <int>G, n_ = <int>N, k_ = <int>H
    cdef int lda = <int>H, ldb = <int>H, ldc = <int>G
    cdef double one = 1.0
    cdef char tr = b'T'
    cdef char nt = b'N'

    with nogil:
        for t in range(T):
            for n in range(N):
                for k in range(G):
                    z[n, k] = xwv[n, t, k]
            # z (N x G) += h (N x H) @ U^T
            if H > 0 and N > 0:
                dgemm(&tr, &nt, &m_, &n_, &k_, &one, &Uv[0, 0], &lda,
                      &h[0, 0], &ldb, &one, &z[0, 0], &ldc)
            for n in range(N):
                for k in range(H):
                    f = _sigmoid(z[n, k])
                    i = _sigmoid(z[n, H + k])
                    o = _sigmoid(z[n, 2 * H + k])
                    g = tanh(z[n, 3 * H + k])
                    gates[n, t, k] = f
                    gates[n, t, H + k] = i
                    gates[n, t, 2 * H + k] = o
                    gates[n, t, 3 * H + k] = g
                    cn = f * c[n, k] + i * g
                    hn = o * tanh(cn)
                    c[n, k] = cn
                    h[n, k] = hn
                    cs[n, t, k] = cn
                    hs[n, t, k] = hn
    return hs_a, cs_a, gates_a


def lstm_backward(dhs, U, c0, cs, gates):
    dhs = np.ascontiguousarray(dhs, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    cs = np.ascontiguousarray(cs, dtype=np.float64)
    gates = np.ascontiguousarray(gates, dtype=np.float64)
    c0 = np.ascontiguousarray(c0, dtype=np.float64)
    cdef Py_ssize_t N = dhs.shape[0], T = dhs.shape[1], H = dhs.shape[2]
    cdef Py_ssize_t G = 4 * H
    dxw_a = np.empty((N, T, G), dtype=np.float64)
    dh_a = np.zeros((N, H), dtype=np.float64)
    dc_a = np.zeros((N, H), dtype=np.float64)
    dz_a = np.empty((N, G), dtype=np.float64)

    cdef double[:, :, ::1] dhsv = dhs
    cdef double[:, ::1] Uv = U
    cdef double[:, :, ::1] csv = cs
    cdef double[:, :, ::1] gv = gates
    cdef double[:, ::1] c0v = c0
    cdef double[:, :, ::1] dxw = dxw_a
    cdef double[:, ::1] dh = dh_a
    cdef double[:, ::1] dc = dc_a
    cdef double[:, ::1] dz = dz_a

    cdef Py_ssize_t n, t, k
    cdef double f, i, o, g, tc, cp, dhk, dck
    cdef int m_ = <int>H, n_ = <int>N, k_ = <int>G
    cdef int lda = <int>H, ldb = <int>G, ldc = <int>H
    cdef double one = 1.0, zero = 0.0
    cdef char nt = b'N'

    with nogil:
        for t in range(T - 1, -1, -1):
            for n in range(N):
                for k in range(H):
                    f = gv[n, t, k]
                    i = gv[n, t, H + k]
                    o = gv[n, t, 2 * H + k]
                    g = gv[n, t, 3 * H + k]
                    if t > 0:
                        cp = csv[n, t - 1, k]
                    else:
                        cp = c0v[n, k]
                    tc = tanh(csv[n, t, k])
                    dhk = dh[n, k] + dhsv[n, t, k]
                    dck = dc[n, k] + dhk * o * (1.0 - tc * tc)
                    dz[n, k] = dck * cp * f * (1.0 - f)
                    dz[n, H + k] = dck * g * i * (1.0 - i)
                    dz[n, 2 * H + k] = dhk * tc * o * (1.0 - o)
                    dz[n, 3 * H + k] = dck * i * (1.0 - g * g)
                    dc[n, k] = dck * f
                for k in range(G):
                    dxw[n, t, k] = dz[n, k]
            # dh (N x H) = dz (N x G) @ U (G x H)
            if H > 0 and N > 0:
                dgemm(&nt, &nt, &m_, &n_, &k_, &one, &Uv[0, 0], &lda,
                      &dz[0, 0], &ldb, &zero, &dh[0, 0], &ldc)
    return dxw_a, dh_a, dc_a


cdef void _im2col(double[:, :, ::1] xv, double[:, ::1] cols, Py_ssize_t Tout, Py_ssize_t ks,
                  Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t N = xv.shape[0], C = xv.shape[2]
    cdef Py_ssize_t n, s, j, ch, r
    for n in range(N):
        for s in range(Tout):
            r = n * Tout + s
            for j in range(ks):
                for ch in range(C):
                    cols[r, j * C + ch] = xv[n, s * stride + j, ch]


def conv1d_forward(x, K, bias, Py_ssize_t stride):
    x = np.ascontiguousarray(x, dtype=np.float64)
    K = np.ascontiguousarray(K, dtype=np.float64)
    bias = np.ascontiguousarray(bias, dtype=np.float64)
    cdef Py_ssize_t N = x.shape[0], T = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t nk = K.shape[0], ks = K.shape[1]
    cdef Py_ssize_t Tout = (T - ks) // stride + 1
    cdef Py_ssize_t M = N * Tout, KC = ks * C
    out_a = np.empty((N, Tout, nk), dtype=np.float64)
    cols_a = np.empty((M, KC), dtype=np.float64)
    cdef double[:, :, ::1] xv = x
    cdef double[:, ::1] Kf = K.reshape(nk, KC)
    cdef double[::1] bv = bias
    cdef double[:, ::1] out = out_a.reshape(M, nk)
    cdef double[:, ::1] cols = cols_a
    cdef Py_ssize_t r, m
    cdef int m_ = <int>nk, n_ = <int>M, k_ = <int>KC
    cdef double one = 1.0
    cdef char tr = b'T'
    cdef char nt = b'N'
    with nogil:
        for r in range(M):
            for m in range(nk):
                out[r, m] = bv[m]
        if M > 0 and nk > 0 and KC > 0:
            _im2col(xv, cols, Tout, ks, stride)
            # out (M x nk) += cols (M x KC) @ Kf^T
            dgemm(&tr, &nt, &m_, &n_, &k_, &one, &Kf[0, 0], &k_, &cols[0, 0], &k_, &one, &out[0, 0], &m_)
    return out_a


def conv1d_backward(g, x, K, Py_ssize_t stride):
    g = np.ascontiguousarray(g, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    K = np.ascontiguousarray(K, dtype=np.float64)
    cdef Py_ssize_t N = x.shape[0], T = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t nk = K.shape[0], ks = K.shape[1]
    cdef Py_ssize_t Tout = g.shape[1]
    cdef Py_ssize_t M = N * Tout, KC = ks * C
    dx_a = np.zeros((N, T, C), dtype=np.float64)
    dK_a = np.zeros((nk, ks, C), dtype=np.float64)
    db_a = np.zeros(nk, dtype=np.float64)
    cols_a = np.empty((M, KC), dtype=np.float64)
    dcols_a = np.empty((M, KC), dtype=np.float64)
    cdef double[:, ::1] g2 = g.reshape(M, nk)
    cdef double[:, :, ::1] xv = x
    cdef double[:, ::1] Kf = K.reshape(nk, KC)
    cdef double[:, :, ::1] dx = dx_a
    cdef double[:, ::1] dK = dK_a.reshape(nk, KC)
    cdef double[::1] db = db_a
    cdef double[:, ::1] cols = cols_a
    cdef double[:, ::1] dcols = dcols_a
    cdef Py_ssize_t n, s, m, j, ch, r
    cdef int nk_ = <int>nk, M_ = <int>M, KC_ = <int>KC
    cdef double one = 1.0, zero = 0.0
    cdef char tr = b'T'
    cdef char nt = b'N'
    with nogil:
        for r in range(M):
            for m in range(nk):
                db[m] += g2[r, m]
        if M > 0 and nk > 0 and KC > 0:
            _im2col(xv, cols, Tout, ks, stride)
            # dK (nk x KC) = g2^T @ cols
            dgemm(&nt, &tr, &KC_, &nk_, &M_, &one, &cols[0, 0], &KC_, &g2[0, 0], &nk_, &zero, &dK[0, 0], &KC_)
            # dcols (M x KC) = g2 @ Kf
            dgemm(&nt, &nt, &KC_, &M_, &nk_, &one, &Kf[0, 0], &KC_, &g2[0, 0], &nk_, &zero, &dcols[0, 0], &KC_)
            for n in range(N):
                for s in range(Tout):
                    r = n * Tout + s
                    for j in range(ks):
                        for ch in range(C):
                            dx[n, s * stride + j, ch] += dcols[r, j * C + ch]
    return dx_a, dK_a, db_a
