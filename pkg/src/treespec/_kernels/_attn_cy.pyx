# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled masked multi-head attention kernel.

Mirrors treespec._kernels._attn_np.attn_forward: per-head scaled
dot-product scores, additive mask, row-max-subtracted softmax, weighted
sum over values.  Scores and accumulators are kept in double precision
internally for both dtypes; results agree with the numpy backend within
the model tolerance, not bit for bit (BLAS sums in a different order).

Masked entries (mask = most negative finite value) underflow to weight
exactly 0.0 after the max subtraction, so masked positions contribute
nothing to the output.
"""

import numpy as np

cimport cython
from libc.math cimport exp, sqrt

ctypedef fused real:
    float
    double

NAME = "cython"


def attn_forward(real[:, ::1] q, real[:, ::1] keys, real[:, ::1] values,
                 real[:, ::1] mask, int num_heads):
    """See treespec._kernels._attn_np.attn_forward for the contract."""
    cdef Py_ssize_t s_len = q.shape[0]
    cdef Py_ssize_t dim = q.shape[1]
    cdef Py_ssize_t t_len = keys.shape[0]
    cdef Py_ssize_t head_dim = dim // num_heads
    cdef double scale = 1.0 / sqrt(<double> head_dim)

    if real is float:
        out_arr = np.zeros((s_len, dim), dtype=np.float32)
    else:
        out_arr = np.zeros((s_len, dim), dtype=np.float64)
    cdef real[:, ::1] out = out_arr
    scores_arr = np.empty(t_len, dtype=np.float64)
    cdef double[::1] scores = scores_arr

    cdef Py_ssize_t h, i, j, c, off
    cdef double s, row_max, z, inv_z, w

    with nogil:
        for h in range(num_heads):
            off = h * head_dim
            for i in range(s_len):
                row_max = -1e308
                for j in range(t_len):
                    s = 0.0
                    for c in range(head_dim):
                        s += (<double> q[i, off + c]) * (<double> keys[j, off + c])
                    s = s * scale + (<double> mask[i, j])
                    scores[j] = s
                    if s > row_max:
                        row_max = s
                z = 0.0
                for j in range(t_len):
                    w = exp(scores[j] - row_max)
                    scores[j] = w
                    z += w
                inv_z = 1.0 / z
                for j in range(t_len):
                    w = scores[j] * inv_z
                    if w != 0.0:
                        for c in range(head_dim):
                            out[i, off + c] += <real> (w * (<double> values[j, off + c]))
    return out_arr
