"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import InvalidInputError


def as_feature_matrix(X, dimension: int | None = None) -> sp.csr_matrix:
    """Coerce ``X`` into a CSR feature matrix of float64 values.

    ``X`` may be a scipy sparse matrix, a dense 2-d array, or a sequence of
    index collections (one per bid request, implicit value 1). Duplicate
    indices within a row are rejected, as are indices outside ``dimension``.
    """
    if sp.issparse(X):
        X = sp.csr_matrix(X, dtype=np.float64)
        if dimension is not None and X.shape[1] > dimension:
            # columns past the model dimension are fine only if empty
            extra = X[:, dimension:]
            if extra.nnz:
                raise InvalidInputError(
                    f"feature index out of range for dimension {dimension}"
                )
            X = X[:, :dimension]
        elif dimension is not None and X.shape[1] < dimension:
            X = sp.csr_matrix((X.data, X.indices, X.indptr), shape=(X.shape[0], dimension))
        X.sum_duplicates()
        return X
    if isinstance(X, np.ndarray) and X.ndim == 2 and X.dtype != object:
        if dimension is not None and X.shape[1] != dimension:
            raise InvalidInputError(
                f"X has {X.shape[1]} columns, expected {dimension}"
            )
        return sp.csr_matrix(X, dtype=np.float64)
    return rows_to_csr(X, dimension)


def rows_to_csr(rows: Iterable[Iterable[int]], dimension: int | None = None) -> sp.csr_matrix:
    """Build a binary CSR matrix from per-row feature id collections."""
    indptr = [0]
    indices: list[int] = []
    for r, row in enumerate(rows):
        ids = [int(i) for i in row]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"row {r}: duplicate feature ids")
        if ids and min(ids) < 0:
            raise InvalidInputError(f"row {r}: negative feature id")
        indices.extend(sorted(ids))
        indptr.append(len(indices))
    idx = np.asarray(indices, dtype=np.int64)
    max_id = int(idx.max()) + 1 if idx.size else 0
    if dimension is None:
        dimension = max_id
    elif max_id > dimension:
        raise InvalidInputError(
            f"feature id {max_id - 1} out of range for dimension {dimension}"
        )
    data = np.ones(idx.size, dtype=np.float64)
    return sp.csr_matrix(
        (data, idx, np.asarray(indptr, dtype=np.int64)),
        shape=(len(indptr) - 1, dimension),
    )


def check_binary_labels(y, n: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise InvalidInputError("labels must be one-dimensional")
    if n is not None and y.shape[0] != n:
        raise InvalidInputError(f"got {y.shape[0]} labels for {n} rows")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInputError("labels must be 0 or 1")
    return y.astype(np.float64)


def check_positive(value, name: str, allow_zero: bool = False) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise InvalidInputError(f"{name} must be finite, got {value}")
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise InvalidInputError(f"{name} must be {bound}, got {value}")
    return value


def check_finite(value, name: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise InvalidInputError(f"{name} must be finite, got {value}")
    return value


def check_grid(lo: float, hi: float, bins: int, name: str) -> tuple[float, float, int]:
    lo, hi = check_finite(lo, f"{name} min"), check_finite(hi, f"{name} max")
    if int(bins) != bins or bins < 1:
        raise InvalidInputError(f"{name} bins must be a positive integer, got {bins}")
    if not hi > lo:
        raise InvalidInputError(f"{name} grid must be increasing, got [{lo}, {hi}]")
    return lo, hi, int(bins)


def check_prices(prices: Sequence[float], name: str = "prices") -> np.ndarray:
    z = np.asarray(prices, dtype=np.float64).ravel()
    if not np.all(np.isfinite(z)):
        raise InvalidInputError(f"{name} must be finite")
    if np.any(z < 0):
        raise InvalidInputError(f"{name} must be non-negative")
    return z
