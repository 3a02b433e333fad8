"""Small input-validation helpers shared by the public entry points."""

import numpy as np

from .errors import DimensionMismatch


def as_float_array(a, name="array", ndim=None, require_finite=True):
    """Coerce to a float64 ndarray and optionally enforce ndim / finiteness."""
    arr = np.asarray(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionMismatch(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if require_finite and arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{name}: contains non-finite entries")
    return arr


def check_square(a, name="matrix"):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{name}: expected a square matrix, got shape {a.shape}")
    return a


def check_symmetric(a, name="matrix", rtol=1e-8):
    scale = 1.0 + (np.abs(a).max() if a.size else 0.0)
    if np.abs(a - a.T).max() > rtol * scale:
        raise ValueError(f"{name}: not symmetric to within tolerance {rtol}")
    return a


def check_length(x, n, name="vector"):
    if x.shape != (n,):
        raise DimensionMismatch(f"{name}: expected shape ({n},), got {x.shape}")
    return x
