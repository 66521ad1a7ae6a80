"""Sequential recurrence kernels with backend selection at import time.

The compiled extension is preferred when present; otherwise the pure-numpy
reference serves.  Set POINTSCAN_PURE_PYTHON=1 to force the fallback, e.g.
for benchmarking one backend against the other.  Both produce bitwise
identical results.
"""

import importlib
import os

import numpy as np

from ..errors import ShapeError
from . import reference

_native = None
if os.environ.get("POINTSCAN_PURE_PYTHON") != "1":
    try:
        _native = importlib.import_module("._native", __name__)
    except ImportError:
        _native = None

_impl = _native if _native is not None else reference

BACKEND = "native" if _native is not None else "python"


def available_backends():
    """Name -> module for every importable backend."""
    out = {"python": reference}
    if _native is not None:
        out["native"] = _native
    return out


def _prepare(name, *arrays):
    first = arrays[0]
    if first.ndim != 3:
        raise ShapeError(f"{name} expects (B, L, M) arrays, got {first.shape}")
    if first.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ShapeError(f"{name} expects float32/float64, got {first.dtype}")
    out = []
    for arr in arrays:
        if arr.shape != first.shape or arr.dtype != first.dtype:
            raise ShapeError(
                f"{name} operands disagree: {arr.shape}/{arr.dtype} "
                f"vs {first.shape}/{first.dtype}"
            )
        out.append(np.ascontiguousarray(arr))
    return out


def linrec_fwd(a, u, impl=None):
    """h[t] = a[t] * h[t-1] + u[t] over axis 1 of (B, L, M) arrays."""
    a, u = _prepare("linrec_fwd", a, u)
    return (impl or _impl).linrec_fwd(a, u)


def linrec_bwd(a, h, g, impl=None):
    """Adjoint of linrec_fwd; returns (da, du)."""
    a, h, g = _prepare("linrec_bwd", a, h, g)
    return (impl or _impl).linrec_bwd(a, h, g)
