"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""
from __future__ import annotations

import numpy as np


def check_vector(x, dim=None, name="x", allow_nonfinite=False) -> np.ndarray:
    """Return ``x`` as a 1-D float array, checking length and finiteness."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {dim}")
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_points(points, dim=None, name="points") -> np.ndarray:
    """Return a non-empty ``(n_points, dim)`` float array."""
    if isinstance(points, np.ndarray):
        arr = points.astype(float, copy=False)
    else:
        rows = list(points)
        if not rows:
            raise ValueError("no points")
        lengths = {np.size(r) for r in rows}
        if len(lengths) != 1:
            raise ValueError(f"{name} have mixed dimensions {sorted(lengths)}")
        arr = np.asarray(rows, dtype=float)
    if arr.size == 0 or arr.shape[0] == 0:
        raise ValueError("no points")
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"{name} have dimension {arr.shape[1]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contain non-finite values")
    return arr


def check_positive(value, name, strict=True) -> float:
    value = float(value)
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        bound = "> 0" if strict else ">= 0"
        raise ValueError(f"{name} must be {bound}, got {value}")
    return value
