"""Shape and dtype validation at the array boundary.

Accepted buffers are row-major float32 or float64 arrays (plus boolean
masks). Contiguous float64 input crosses without copying; anything else is
converted exactly once. Violations raise TypeError / ValueError before any
solver runs.
"""

import numpy as np

_FLOAT_KINDS = (np.float32, np.float64)


def _as_float64(name, arr):
    # Value-level checks (finiteness of entries actually used) stay with
    # the primary library; invalid-masked pixels may hold arbitrary bits.
    arr = np.asarray(arr)
    if arr.dtype not in _FLOAT_KINDS:
        raise TypeError(f"{name} must be float32 or float64, got {arr.dtype}")
    # Single conversion copy for float32 or non-contiguous input; float64
    # C-contiguous buffers pass through untouched.
    return np.ascontiguousarray(arr, dtype=np.float64)


def as_grid(name, arr):
    """(H, W, 3) point grid."""
    out = _as_float64(name, arr)
    if out.ndim != 3 or out.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {out.shape}")
    return out


def as_points(name, arr):
    """(N, 3) point list."""
    out = _as_float64(name, arr)
    if out.ndim != 2 or out.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {out.shape}")
    return out


def as_vector(name, arr, length=None):
    """1-D float buffer, optionally of fixed length."""
    out = _as_float64(name, arr)
    if out.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {out.shape}")
    if length is not None and out.shape[0] != length:
        raise ValueError(f"{name} must have length {length}, got {out.shape[0]}")
    return out


def as_mask(name, arr, shape):
    """(H, W) boolean mask; None means all valid."""
    if arr is None:
        return np.ones(shape, dtype=bool)
    arr = np.asarray(arr)
    if arr.dtype != np.bool_:
        raise TypeError(f"{name} must be a boolean array, got {arr.dtype}")
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr
