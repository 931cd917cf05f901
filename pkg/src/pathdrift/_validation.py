"""Input validation helpers used across the package."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .exceptions import DomainError, NumericError


def check_positive(name, value, strict=True):
    value = float(value)
    if not np.isfinite(value) or value < 0 or (strict and value == 0):
        bound = "> 0" if strict else ">= 0"
        raise DomainError(f"{name} must be finite and {bound}, got {value!r}")
    return value


def check_probability_open(name, value):
    value = float(value)
    if not 0.0 < value < 1.0:
        raise DomainError(f"{name} must lie in (0, 1), got {value!r}")
    return value


def check_point(x, dim=None, name="x"):
    """Return ``x`` as a finite float vector of shape ``(dim,)``."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise DomainError(f"{name} must be a vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DomainError(f"{name} must have dimension {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values", state=arr)
    return arr


def check_points(X, dim, name="X"):
    """Validate a batch of query points; scalars and vectors are promoted.

    A 1-d input is read as one point per entry when ``dim == 1`` and as a
    single point otherwise.
    """
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dim == 1 else arr.reshape(1, -1)
    arr = check_array(arr, ensure_2d=True, dtype=float, input_name=name)
    if arr.shape[1] != dim:
        raise DomainError(f"{name} must have {dim} columns, got {arr.shape[1]}")
    return arr


def check_spd(A, name="A", tol=1e-12):
    """Return the Cholesky factor of a symmetric positive-definite matrix.

    Accepts a single matrix or a stack ``(..., d, d)``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DomainError(f"{name} must be square, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A))) if A.size else 1.0)
    if np.max(np.abs(A - np.swapaxes(A, -1, -2)), initial=0.0) > tol * scale:
        raise DomainError(f"{name} is not symmetric")
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise DomainError(f"{name} is not positive definite") from exc


def check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise DomainError("time grid must be a non-empty 1-d sequence")
    if grid[0] != 0.0:
        raise DomainError(f"time grid must start at 0, got {grid[0]!r}")
    if not np.all(np.isfinite(grid)):
        raise DomainError("time grid contains non-finite values")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise DomainError("time grid must be strictly increasing")
    return grid
