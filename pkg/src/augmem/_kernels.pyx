# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense kernels (float32, single accumulator type).

Same surface as ``augmem._pykernels``.  Loops are written so that each output
row depends only on its own inputs, which keeps results bit-stable when a
computation is repeated over a longer prefix.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport expf, sqrtf, INFINITY

cnp.import_array()

NAME = "compiled"


cdef void _rowmat(const float* x, const float* w, float* out, Py_ssize_t m, Py_ssize_t p) noexcept nogil:
    # out[0:p] += x[0:m] @ w[m, p]; the inner loop is contiguous and vectorizes
    cdef Py_ssize_t k, j
    cdef float xk
    cdef const float* wrow
    for k in range(m):
        xk = x[k]
        wrow = w + k * p
        for j in range(p):
            out[j] += xk * wrow[j]


def matmul(const float[:, ::1] a, const float[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], p = b.shape[1]
    out_arr = np.zeros((n, p), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t i
    if n == 0 or p == 0 or m == 0:
        return out_arr
    with nogil:
        for i in range(n):
            _rowmat(&a[i, 0], &b[0, 0], &out[i, 0], m, p)
    return out_arr


def linear(const float[:, ::1] x, const float[:, ::1] w, b):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], p = w.shape[1]
    out_arr = np.empty((n, p), dtype=np.float32)
    if n == 0 or p == 0:
        return out_arr
    cdef float[:, ::1] out = out_arr
    cdef const float[::1] bias
    cdef bint has_bias = b is not None
    cdef Py_ssize_t i, j
    if has_bias:
        bias = b
    with nogil:
        for i in range(n):
            if has_bias:
                for j in range(p):
                    out[i, j] = bias[j]
            else:
                for j in range(p):
                    out[i, j] = 0.0
            if m > 0:
                _rowmat(&x[i, 0], &w[0, 0], &out[i, 0], m, p)
    return out_arr


def softmax_rows(const float[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    out_arr = np.empty((n, m), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef float mx, s
    with nogil:
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, m):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(m):
                out[i, j] = expf(x[i, j] - mx)
                s += out[i, j]
            for j in range(m):
                out[i, j] = out[i, j] / s
    return out_arr


def layer_norm_rows(const float[:, ::1] x, const float[::1] gain, const float[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    out_arr = np.empty((n, m), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef float mean, var, d, inv
    cdef float feps = <float>eps
    with nogil:
        for i in range(n):
            mean = 0.0
            for j in range(m):
                mean += x[i, j]
            mean = mean / m
            var = 0.0
            for j in range(m):
                d = x[i, j] - mean
                var += d * d
            var = var / m
            inv = 1.0 / sqrtf(var + feps)
            for j in range(m):
                out[i, j] = (x[i, j] - mean) * inv * gain[j] + bias[j]
    return out_arr


def relu(const float[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    out_arr = np.empty((n, m), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            for j in range(m):
                out[i, j] = x[i, j] if x[i, j] > 0.0 else 0.0
    return out_arr


def attention(const float[:, ::1] q, const float[:, ::1] k, const float[:, ::1] v, int n_heads,
              double scale, limits=None):
    cdef Py_ssize_t nq = q.shape[0], d = q.shape[1], nk = k.shape[0]
    cdef Py_ssize_t dh = d // n_heads
    out_arr = np.zeros((nq, d), dtype=np.float32)
    if nq == 0 or nk == 0:
        return out_arr
    cdef float[:, ::1] out = out_arr
    lim_arr = np.full(nq, nk, dtype=np.intp) if limits is None else np.ascontiguousarray(limits, dtype=np.intp)
    cdef Py_ssize_t[::1] lim = lim_arr
    # keys transposed per head so score accumulation runs over contiguous memory
    kt_arr = np.ascontiguousarray(np.asarray(k).T)
    cdef const float[:, ::1] kt = kt_arr
    scores_arr = np.empty(nk, dtype=np.float32)
    cdef float[::1] scores = scores_arr
    cdef float fscale = <float>scale
    cdef Py_ssize_t h, j, t, c, off, nvalid
    cdef float mx, total, qc, p
    cdef float* sc = &scores[0]
    cdef const float* krow
    cdef const float* vrow
    cdef float* orow
    with nogil:
        for h in range(n_heads):
            off = h * dh
            for j in range(nq):
                nvalid = lim[j]
                if nvalid > nk:
                    nvalid = nk
                if nvalid <= 0:
                    continue
                for t in range(nvalid):
                    sc[t] = 0.0
                for c in range(dh):
                    qc = q[j, off + c]
                    krow = &kt[off + c, 0]
                    for t in range(nvalid):
                        sc[t] += qc * krow[t]
                mx = -INFINITY
                for t in range(nvalid):
                    sc[t] = sc[t] * fscale
                    if sc[t] > mx:
                        mx = sc[t]
                total = 0.0
                for t in range(nvalid):
                    sc[t] = expf(sc[t] - mx)
                    total += sc[t]
                orow = &out[j, off]
                for t in range(nvalid):
                    p = sc[t] / total
                    vrow = &v[t, off]
                    for c in range(dh):
                        orow[c] += p * vrow[c]
    return out_arr


def conv2d_s2(const float[:, :, ::1] x, const float[:, ::1] w, const float[::1] b,
              Py_ssize_t in_start, Py_ssize_t in_len, Py_ssize_t t0, Py_ssize_t t1):
    cdef Py_ssize_t cin = x.shape[0], tbuf = x.shape[1], f_in = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0]
    cdef Py_ssize_t f_out = (f_in + 1) // 2
    cdef Py_ssize_t n = t1 - t0
    if n <= 0:
        return np.zeros((cout, 0, f_out), dtype=np.float32)
    out_arr = np.empty((cout, n, f_out), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef Py_ssize_t co, ci, t, f, dt, df, r, col
    cdef float acc
    with nogil:
        for co in range(cout):
            for t in range(n):
                for f in range(f_out):
                    acc = b[co]
                    for ci in range(cin):
                        for dt in range(3):
                            r = 2 * (t0 + t) - 1 + dt
                            if r < 0 or r >= in_len or r < in_start or r >= in_start + tbuf:
                                continue
                            for df in range(3):
                                col = 2 * f - 1 + df
                                if col < 0 or col >= f_in:
                                    continue
                                acc = acc + w[co, ci * 9 + dt * 3 + df] * x[ci, r - in_start, col]
                    out[co, t, f] = acc if acc > 0.0 else 0.0
    return out_arr
