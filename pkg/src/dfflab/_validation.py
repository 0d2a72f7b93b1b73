from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_assignments(X, n_features: int | None = None) -> np.ndarray:
    """Validate a matrix of boolean feature assignments and return it as ``bool``."""
    X = check_array(X, dtype=None, ensure_2d=True, ensure_min_samples=0)
    if X.dtype != bool:
        if not np.isin(X, (0, 1)).all():
            raise ValueError("assignments must be boolean or 0/1")
        X = X.astype(bool)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y, dtype=object)
    if y.ndim != 1 or len(y) != n_samples:
        raise ValueError(f"y must be 1-d with {n_samples} entries")
    return y
