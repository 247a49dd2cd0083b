"""Input validation helpers used by the estimators and data containers."""

import numpy as np


def as_2d_float(x, name="X"):
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_1d_float(x, name="y"):
    """Coerce to a 1-D float64 array, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_binary(x, name="treatment"):
    """Coerce to a 1-D int array of exactly 0/1 entries."""
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got ndim={arr.ndim}")
    vals = np.unique(arr)
    if not np.all(np.isin(vals, (0, 1))):
        raise ValueError(f"{name} entries must be exactly 0 or 1")
    return arr.astype(np.int64)


def check_lengths(*arrays, names=None):
    """Raise if the arrays differ in their leading dimension."""
    lengths = [len(a) for a in arrays]
    if len(set(lengths)) > 1:
        labels = names or [f"arg{i}" for i in range(len(arrays))]
        detail = ", ".join(f"{nm}={ln}" for nm, ln in zip(labels, lengths))
        raise ValueError(f"length mismatch: {detail}")


def check_simplex(v, name="weights", tol=1e-10):
    """Check that v is a probability vector (nonnegative, sums to 1)."""
    arr = np.asarray(v, dtype=np.float64)
    if np.any(arr < 0):
        raise ValueError(f"{name} has negative entries")
    if abs(arr.sum() - 1.0) > tol:
        raise ValueError(f"{name} sums to {arr.sum()!r}, expected 1 within {tol}")
    return arr
