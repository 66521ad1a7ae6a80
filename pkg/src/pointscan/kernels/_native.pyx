# cython: boundscheck=False, wraparound=False, initializedcheck=False, language_level=3
"""Compiled sequential recurrence kernels.

Same contracts and the same multiply/add ordering as kernels.reference; the
build disables FP contraction so results match the fallback bitwise.
"""

import numpy as np


ctypedef fused real:
    float
    double


def linrec_fwd(real[:, :, ::1] a, real[:, :, ::1] u):
    cdef Py_ssize_t B = u.shape[0], L = u.shape[1], M = u.shape[2]
    cdef Py_ssize_t b, t, m
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    h_np = np.empty((B, L, M), dtype=dtype)
    carry_np = np.zeros(M, dtype=dtype)
    cdef real[:, :, ::1] h = h_np
    cdef real[::1] carry = carry_np
    for b in range(B):
        carry[:] = 0
        for t in range(L):
            for m in range(M):
                carry[m] = a[b, t, m] * carry[m] + u[b, t, m]
                h[b, t, m] = carry[m]
    return h_np


def linrec_bwd(real[:, :, ::1] a, real[:, :, ::1] h, real[:, :, ::1] g):
    cdef Py_ssize_t B = g.shape[0], L = g.shape[1], M = g.shape[2]
    cdef Py_ssize_t b, t, m
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    ga_np = np.empty((B, L, M), dtype=dtype)
    gu_np = np.empty((B, L, M), dtype=dtype)
    ghat_np = np.zeros(M, dtype=dtype)
    cdef real[:, :, ::1] ga = ga_np
    cdef real[:, :, ::1] gu = gu_np
    cdef real[::1] ghat = ghat_np
    for b in range(B):
        for m in range(M):
            ghat[m] = g[b, L - 1, m]
            gu[b, L - 1, m] = ghat[m]
            ga[b, L - 1, m] = ghat[m] * h[b, L - 2, m] if L > 1 else 0
        for t in range(L - 2, -1, -1):
            for m in range(M):
                ghat[m] = a[b, t + 1, m] * ghat[m] + g[b, t, m]
                gu[b, t, m] = ghat[m]
                ga[b, t, m] = ghat[m] * h[b, t - 1, m] if t > 0 else 0
    return ga_np, gu_np
