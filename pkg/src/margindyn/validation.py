"""Input validation helpers used by the public API."""

import numpy as np

from .errors import DataError, NumericError, ShapeError


def as_float_array(x, name="array", ndim=None, allow_empty=True):
    """Coerce to a C-contiguous float64 ndarray and reject non-finite values."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise DataError(f"{name} must not be empty")
    if arr.size and not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains NaN or Inf")
    return arr


def check_sorted(margins, name="margins"):
    """Require a non-empty ascending 1-D float array (ties allowed)."""
    arr = as_float_array(margins, name, ndim=1, allow_empty=False)
    if arr.size > 1 and np.any(np.diff(arr) < 0):
        raise DataError(f"{name} must be sorted ascending")
    return arr


def check_series_pair(x, y):
    """Two equal-length 1-D series of at least two points."""
    xa = as_float_array(x, "x", ndim=1)
    ya = as_float_array(y, "y", ndim=1)
    if xa.shape != ya.shape:
        raise ShapeError(f"series length mismatch: {xa.shape[0]} vs {ya.shape[0]}")
    if xa.size < 2:
        raise DataError("series need at least 2 points")
    return xa, ya


def check_probability(p, name="probability", inclusive_low=True, inclusive_high=True):
    p = float(p)
    lo_ok = p >= 0.0 if inclusive_low else p > 0.0
    hi_ok = p <= 1.0 if inclusive_high else p < 1.0
    if not (lo_ok and hi_ok):
        raise DataError(f"{name} must lie in the unit interval, got {p}")
    return p


def check_positive(v, name):
    v = float(v)
    if not np.isfinite(v) or v <= 0:
        raise DataError(f"{name} must be a positive finite number, got {v}")
    return v
