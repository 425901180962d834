"""Input validation helpers shared by the kernels and the estimator."""

import numpy as np
from sklearn.utils.validation import check_array


def check_features(X, *, name="features", allow_batch=False):
    """Return ``X`` as a finite float64 array of shape (N, d) or (B, N, d).

    Raises:
        ValueError: on empty input, wrong rank or non-finite entries.
    """
    X = np.asarray(X)
    if X.ndim == 1:
        raise ValueError(f"{name} must be 2-D (N, d); got a 1-D array")
    if X.ndim == 3 and not allow_batch:
        raise ValueError(f"{name} must be 2-D (N, d); got shape {X.shape}")
    if X.ndim > 3:
        raise ValueError(f"{name} has too many dimensions: {X.shape}")
    return check_array(
        X,
        dtype=np.float64,
        allow_nd=allow_batch,
        ensure_all_finite=True,
        ensure_min_samples=1,
        ensure_min_features=1,
        input_name=name,
    )


def check_neighbors(nbrs, n_points):
    """Validate an integer neighbor table against ``n_points`` rows."""
    nbrs = np.asarray(nbrs)
    if not np.issubdtype(nbrs.dtype, np.integer):
        raise TypeError(f"neighbor indices must be integers, got {nbrs.dtype}")
    if nbrs.ndim < 2 or nbrs.shape[-1] == 0:
        raise ValueError(f"neighbor table must be (..., N, K) with K >= 1, got {nbrs.shape}")
    if nbrs.shape[-2] != n_points:
        raise ValueError(
            f"neighbor table has {nbrs.shape[-2]} rows but there are {n_points} points"
        )
    if nbrs.size and (nbrs.min() < 0 or nbrs.max() >= n_points):
        raise IndexError("neighbor index out of range")
    return nbrs.astype(np.intp, copy=False)


def check_positive_int(value, name, *, minimum=1):
    if isinstance(value, (bool, np.bool_)) or int(value) != value:
        raise TypeError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return value
