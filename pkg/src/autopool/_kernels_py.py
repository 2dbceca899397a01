"""Pure NumPy implementation of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature;
the two agree to rounding.  Within one implementation, mean pooling and
auto-pooling share ``weighted_sum`` so that alpha = 0 reproduces the mean
bit for bit.  Arrays are float64, shaped ``(B, m, C)`` for
instance data and ``(B, C)`` for per-bag data.
"""
import numpy as np

NAME = "numpy"


def weighted_sum(weights, values):
    return np.sum(weights * values, axis=1)


def autopool_forward(p, alpha):
    z = p * alpha
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    weights = e / e.sum(axis=1, keepdims=True)
    return weighted_sum(weights, p), weights


def autopool_backward(p, alpha, weights, pooled, upstream):
    diff = p - pooled[:, None, :]
    d_p = upstream[:, None, :] * weights * (1.0 + alpha * diff)
    var = weighted_sum(weights, diff * diff)
    return d_p, upstream * var


def segment_counts(pred, ref):
    pred = pred.astype(bool)
    ref = ref.astype(bool)
    tp = np.sum(pred & ref, axis=0, dtype=np.int64)
    fp = np.sum(pred & ~ref, axis=0, dtype=np.int64)
    fn = np.sum(~pred & ref, axis=0, dtype=np.int64)
    fn_t = np.sum(~pred & ref, axis=1, dtype=np.int64)
    fp_t = np.sum(pred & ~ref, axis=1, dtype=np.int64)
    s_t = np.minimum(fn_t, fp_t)
    subs = int(s_t.sum())
    dels = int((fn_t - s_t).sum())
    ins = int((fp_t - s_t).sum())
    n_ref = int(ref.sum())
    return tp, fp, fn, subs, dels, ins, n_ref
