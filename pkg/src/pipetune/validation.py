"""Small input-validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np


def check_matrix(X, n_features: int | None = None, name: str = "X") -> np.ndarray:
    """Coerce to a finite 2-D float64 array, optionally checking the width."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got ndim={X.ndim}")
    if X.size and not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(
            f"{name} has {X.shape[1]} features, expected {n_features}"
        )
    return X


def check_vector(y, n_rows: int | None = None, name: str = "y") -> np.ndarray:
    """Coerce to a finite 1-D float64 array, optionally checking the length."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size and not np.all(np.isfinite(y)):
        raise ValueError(f"{name} contains non-finite values")
    if n_rows is not None and len(y) != n_rows:
        raise ValueError(f"{name} has length {len(y)}, expected {n_rows}")
    return y
