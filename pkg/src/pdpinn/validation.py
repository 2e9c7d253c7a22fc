"""Small argument-checking helpers used at public entry points."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError


def as_points(x, name: str = "points") -> np.ndarray:
    """Coerce to a float64 (n, 2) coordinate array or raise."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidArgumentError(f"{name} must have shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return arr


def as_field(values, n: int, name: str = "field") -> np.ndarray:
    """Coerce to a float64 (n,) sample vector aligned with a point cloud."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.shape[0] != n:
        raise InvalidArgumentError(
            f"{name} has {arr.shape[0]} samples but the cloud has {n} points"
        )
    return arr


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise InvalidArgumentError(f"{name} must be positive and finite, got {value}")
    return value


def check_nonnegative(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0.0:
        raise InvalidArgumentError(f"{name} must be >= 0 and finite, got {value}")
    return value
