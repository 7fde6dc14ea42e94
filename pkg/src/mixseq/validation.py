"""Input validation helpers shared by the estimators and drivers."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import InvalidArgumentError


def check_mixed_array(X, level_counts, n_features=None):
    """Split a mixed design array into unit-scale ``x`` and integer levels ``z``.

    Parameters
    ----------
    X : array_like of shape (n, p + q)
        Continuous columns first, then ``q = len(level_counts)`` columns of
        1-based level indices.
    level_counts : sequence of int
    n_features : int, optional
        Expected total column count.

    Returns
    -------
    Xc : ndarray of shape (n, p)
    Z : ndarray of shape (n, q), dtype int
    """
    try:
        X = check_array(X, dtype=float, ensure_2d=True, ensure_min_features=0)
    except ValueError as exc:
        raise InvalidArgumentError(str(exc)) from exc
    q = len(level_counts)
    if n_features is not None and X.shape[1] != n_features:
        raise InvalidArgumentError(f"X has {X.shape[1]} columns, expected {n_features}")
    if X.shape[1] < q:
        raise InvalidArgumentError(f"X has {X.shape[1]} columns but {q} qualitative factors")
    p = X.shape[1] - q
    Xc = X[:, :p]
    zf = X[:, p:]
    Z = np.rint(zf).astype(int)
    if np.any(np.abs(zf - Z) > 1e-9):
        raise InvalidArgumentError("qualitative columns must hold integer level indices")
    counts = np.asarray(level_counts, dtype=int)
    if np.any(Z < 1) or np.any(Z > counts[None, :]):
        raise InvalidArgumentError("level index out of range")
    return np.ascontiguousarray(Xc), Z


def check_response(y, n):
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) != n:
        raise InvalidArgumentError(f"got {len(y)} responses for {n} points")
    if not np.all(np.isfinite(y)):
        raise InvalidArgumentError("responses must be finite")
    return y


def check_unit_interval(X, name="x"):
    X = np.asarray(X, dtype=float)
    if np.any(X < 0.0) or np.any(X > 1.0):
        raise InvalidArgumentError(f"{name} must lie in the unit cube")
    return X
