"""Input validation helpers shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import InvalidInputError, ShapeError


def check_matrix(X, *, allow_empty_rows=False):
    """2-D finite float array; non-finite entries raise InvalidInputError."""
    try:
        return check_array(
            X,
            dtype=np.float64,
            ensure_min_samples=0 if allow_empty_rows else 1,
            ensure_min_features=0,
        )
    except ValueError as exc:
        raise InvalidInputError(str(exc)) from exc


def check_target(y, n=None):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ShapeError(f"target must be 1-D, got shape {y.shape}")
    if n is not None and y.shape[0] != n:
        raise ShapeError(f"target has {y.shape[0]} entries for {n} rows")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("target contains non-finite values")
    return y


def check_paired(a, b, *, min_len=1):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InvalidInputError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < min_len:
        raise InvalidInputError(f"need at least {min_len} values, got {a.shape[0]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("non-finite values")
    return a, b
