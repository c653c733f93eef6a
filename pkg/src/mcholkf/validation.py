"""Small input-validation helpers shared by the numerical modules."""

from __future__ import annotations

import numpy as np


def as_float_array(x, name: str, ndim: int | None = None) -> np.ndarray:
    """Coerce to a float64 ndarray, optionally enforcing dimensionality."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def ensure_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise ValueError(f"{name} contains {bad} non-finite entries")
    return arr


def as_index_array(x, name: str) -> np.ndarray:
    """Coerce to a strictly increasing array of nonnegative indices."""
    idx = np.asarray(x, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if idx.size and idx[0] < 0:
        raise ValueError(f"{name} must be nonnegative")
    if idx.size > 1 and not np.all(np.diff(idx) > 0):
        raise ValueError(f"{name} must be strictly increasing")
    return idx


def center_rows(X: np.ndarray) -> np.ndarray:
    """Remove row means twice so the residual sums are at rounding level."""
    U = X - X.mean(axis=1, keepdims=True)
    U -= U.mean(axis=1, keepdims=True)
    return U
