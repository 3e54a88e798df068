"""Input validation helpers."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .simulate import RatingPanel


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_ratings(X, k_states: int) -> np.ndarray:
    """Return ``X`` as an int64 ``(n_firms, n_dates)`` matrix of ratings in ``1..K``."""
    check_positive_int(k_states, "k_states", minimum=3)
    arr = check_array(X, dtype=None, ensure_2d=True, ensure_min_features=2)
    if not np.issubdtype(arr.dtype, np.integer):
        arr = arr.astype(float)
        if not np.all(arr == np.round(arr)):
            raise ValueError("ratings must be integer valued")
    arr = arr.astype(np.int64)
    if arr.min() < 1 or arr.max() > k_states:
        raise ValueError(f"ratings must lie in 1..{k_states}")
    return arr


def check_panel(X, k_states: int) -> RatingPanel:
    """Accept a :class:`RatingPanel` or a rating matrix."""
    if isinstance(X, RatingPanel):
        if X.k_states != k_states:
            raise ValueError(f"panel has K={X.k_states}, expected {k_states}")
        return X
    return RatingPanel(ratings=check_ratings(X, k_states), k_states=k_states)


def check_probability_vector(p, length: int | None = None, name: str = "vector",
                             atol: float = 1e-10) -> np.ndarray:
    arr = np.asarray(p, dtype=float).reshape(-1)
    if length is not None and arr.size != length:
        raise ValueError(f"{name} must have length {length}")
    if np.any(arr < 0) or abs(arr.sum() - 1.0) > atol:
        raise ValueError(f"{name} must be a probability vector")
    return arr
