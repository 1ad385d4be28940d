"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .data import Dataset
from .exceptions import DimensionMismatchError


def check_dataset(X, min_pairs: int = 2) -> Dataset:
    if not isinstance(X, Dataset):
        raise TypeError(f"expected a Dataset, got {type(X).__name__}")
    if len(X.images) < min_pairs:
        raise ValueError(f"need at least {min_pairs} image/caption pairs, got {len(X.images)}")
    return X


def check_feature_set(X, dim: int | None = None, name: str = "features") -> np.ndarray:
    """A finite 2-D float64 ``(rows, dim)`` matrix."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, input_name=name)
    if dim is not None and X.shape[1] != dim:
        raise DimensionMismatchError(f"{name}: expected {dim} columns, got {X.shape[1]}")
    return X


def check_feature_sets(sets, dim: int | None = None, name: str = "features") -> list:
    sets = [check_feature_set(X, dim, name) for X in sets]
    if not sets:
        raise ValueError(f"{name}: empty collection")
    return sets
