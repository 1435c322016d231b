"""Small input-validation helpers used across the package."""
from __future__ import annotations

import numpy as np

from .exceptions import InvalidInputError


def require(condition: bool, message: str) -> None:
    if not condition:
        raise InvalidInputError(message)


def as_float_array(x, name: str, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def as_label_array(y, name: str, n_classes: int | None = None) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    arr = arr.astype(np.int64, casting="unsafe")
    if n_classes is not None and (arr.min(initial=0) < 0 or arr.max(initial=-1) >= n_classes):
        raise InvalidInputError(f"{name} must lie in [0, {n_classes})")
    return arr


def positive_scalar(x, name: str) -> float:
    value = float(x)
    if not np.isfinite(value) or value <= 0:
        raise InvalidInputError(f"{name} must be a positive real, got {value!r}")
    return value


def nonnegative_scalar(x, name: str) -> float:
    value = float(x)
    if not np.isfinite(value) or value < 0:
        raise InvalidInputError(f"{name} must be a nonnegative real, got {value!r}")
    return value
