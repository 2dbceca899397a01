# cython: language_level=3
"""Compiled kernels for auto-pooling and segment counting.

Mirrors ``_kernels_py``.  ``autopool_forward`` accumulates the pooled value
in the same loop order as ``weighted_sum``.
"""
import numpy as np
from libc.math cimport exp

NAME = "cython"


def weighted_sum(const double[:, :, ::1] weights, const double[:, :, ::1] values):
    cdef Py_ssize_t B = values.shape[0], m = values.shape[1], C = values.shape[2]
    cdef Py_ssize_t b, j, c
    out = np.zeros((B, C))
    cdef double[:, ::1] o = out
    with nogil:
        for b in range(B):
            for j in range(m):
                for c in range(C):
                    o[b, c] += weights[b, j, c] * values[b, j, c]
    return out


def autopool_forward(const double[:, :, ::1] p, const double[::1] alpha):
    cdef Py_ssize_t B = p.shape[0], m = p.shape[1], C = p.shape[2]
    cdef Py_ssize_t b, j, c
    cdef double z, zmax, total, acc
    weights = np.empty((B, m, C))
    pooled = np.empty((B, C))
    cdef double[:, :, ::1] w = weights
    cdef double[:, ::1] out = pooled
    with nogil:
        for b in range(B):
            for c in range(C):
                zmax = alpha[c] * p[b, 0, c]
                for j in range(1, m):
                    z = alpha[c] * p[b, j, c]
                    if z > zmax:
                        zmax = z
                total = 0.0
                for j in range(m):
                    w[b, j, c] = exp(alpha[c] * p[b, j, c] - zmax)
                    total = total + w[b, j, c]
                acc = 0.0
                for j in range(m):
                    w[b, j, c] = w[b, j, c] / total
                    acc = acc + w[b, j, c] * p[b, j, c]
                out[b, c] = acc
    return pooled, weights


def autopool_backward(const double[:, :, ::1] p, const double[::1] alpha,
                      const double[:, :, ::1] weights, const double[:, ::1] pooled,
                      const double[:, ::1] upstream):
    cdef Py_ssize_t B = p.shape[0], m = p.shape[1], C = p.shape[2]
    cdef Py_ssize_t b, j, c
    cdef double diff, var, up
    d_p = np.empty((B, m, C))
    d_alpha = np.empty((B, C))
    cdef double[:, :, ::1] dp = d_p
    cdef double[:, ::1] da = d_alpha
    with nogil:
        for b in range(B):
            for c in range(C):
                up = upstream[b, c]
                var = 0.0
                for j in range(m):
                    diff = p[b, j, c] - pooled[b, c]
                    dp[b, j, c] = up * weights[b, j, c] * (1.0 + alpha[c] * diff)
                    var = var + weights[b, j, c] * (diff * diff)
                da[b, c] = up * var
    return d_p, d_alpha


def segment_counts(const signed char[:, ::1] pred, const signed char[:, ::1] ref):
    cdef Py_ssize_t T = pred.shape[0], C = pred.shape[1]
    cdef Py_ssize_t t, c
    cdef long long fn_t, fp_t, s_t
    cdef long long subs = 0, dels = 0, ins = 0, n_ref = 0
    tp = np.zeros(C, dtype=np.int64)
    fp = np.zeros(C, dtype=np.int64)
    fn = np.zeros(C, dtype=np.int64)
    cdef long long[::1] tp_v = tp
    cdef long long[::1] fp_v = fp
    cdef long long[::1] fn_v = fn
    with nogil:
        for t in range(T):
            fn_t = 0
            fp_t = 0
            for c in range(C):
                if ref[t, c]:
                    n_ref += 1
                    if pred[t, c]:
                        tp_v[c] += 1
                    else:
                        fn_v[c] += 1
                        fn_t += 1
                elif pred[t, c]:
                    fp_v[c] += 1
                    fp_t += 1
            s_t = fn_t if fn_t < fp_t else fp_t
            subs += s_t
            dels += fn_t - s_t
            ins += fp_t - s_t
    return tp, fp, fn, int(subs), int(dels), int(ins), int(n_ref)
