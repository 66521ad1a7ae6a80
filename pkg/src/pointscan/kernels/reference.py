"""Pure-numpy sequential recurrence kernels.

These are the fallback for the compiled extension and the semantic ground
truth for it: both run the identical sequence of IEEE multiply/add steps, so
outputs agree bitwise (the extension is built with FP contraction disabled).

Array layout everywhere: (B, L, M) C-contiguous, float32 or float64, where M
is the flattened state width.
"""

import numpy as np


def linrec_fwd(a, u):
    """h[t] = a[t] * h[t-1] + u[t] along axis 1, with h[-1] = 0."""
    h = np.empty_like(u)
    carry = np.zeros_like(u[:, 0])
    for t in range(u.shape[1]):
        carry = a[:, t] * carry + u[:, t]
        h[:, t] = carry
    return h


def linrec_bwd(a, h, g):
    """Adjoint of linrec_fwd.

    Running the recurrence backwards: ghat[t] = a[t+1] * ghat[t+1] + g[t],
    then du[t] = ghat[t] and da[t] = ghat[t] * h[t-1] (zero at t = 0).
    """
    L = g.shape[1]
    ga = np.empty_like(g)
    gu = np.empty_like(g)
    ghat = g[:, L - 1].copy()
    gu[:, L - 1] = ghat
    ga[:, L - 1] = ghat * h[:, L - 2] if L > 1 else 0.0
    for t in range(L - 2, -1, -1):
        ghat = a[:, t + 1] * ghat + g[:, t]
        gu[:, t] = ghat
        ga[:, t] = ghat * h[:, t - 1] if t > 0 else 0.0
    return ga, gu
