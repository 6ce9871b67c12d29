"""Shared input-validation helpers.

Public entry points funnel untrusted values through these checks so the
numerical code can assume finite, well-shaped float64 arrays.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ValidationError",
    "require",
    "as_float_vector",
    "as_float_matrix",
    "as_evidence",
    "as_probability_vector",
]


class ValidationError(ValueError):
    """An input violates a documented precondition."""


def require(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)


def as_float_vector(values, name: str = "values") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    require(arr.ndim == 1, f"{name} must be 1-dimensional, got shape {arr.shape}")
    require(bool(np.isfinite(arr).all()), f"{name} must contain only finite values")
    return arr


def as_float_matrix(values, name: str = "values") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    require(arr.ndim == 2, f"{name} must be 2-dimensional, got shape {arr.shape}")
    require(bool(np.isfinite(arr).all()), f"{name} must contain only finite values")
    return arr


def as_evidence(values, name: str = "evidence") -> np.ndarray:
    """Validate a vector of per-class evidence counts (finite, non-negative)."""
    arr = as_float_vector(values, name)
    require(arr.size >= 1, f"{name} must have at least one entry")
    require(bool((arr >= 0).all()), f"{name} entries must be non-negative")
    return arr


def as_probability_vector(values, name: str = "probabilities", tol: float = 1e-6) -> np.ndarray:
    arr = as_float_vector(values, name)
    require(bool((arr >= 0).all()), f"{name} entries must be non-negative")
    require(abs(float(arr.sum()) - 1.0) <= tol, f"{name} must sum to 1, got {arr.sum()!r}")
    return arr
