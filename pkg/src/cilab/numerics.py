"""Dense float64 linear algebra and numerically stable statistical primitives.

Vectors are 1-d and matrices 2-d row-major ``float64`` numpy arrays; the
heavy lifting is delegated to BLAS, with cilab owning shape validation and
the log-domain statistics every other module builds on.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DomainError, ShapeError

LOG_2PI = float(np.log(2.0 * np.pi))


def as_vec(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected 1-d vector, got shape {v.shape}")
    return v


def as_mat(x) -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected 2-d matrix, got shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit conformability checking."""
    a = as_mat(a)
    b = as_mat(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def log_sum_exp(v: np.ndarray, axis=None) -> np.ndarray | float:
    """log(sum(exp(v))) via max-subtraction; never overflows for finite input."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise DomainError("log_sum_exp of empty input")
    if axis is None:
        m = np.max(v)
        if not np.isfinite(m):
            return float(m)  # all -inf, or a +inf entry
        return float(m + np.log(np.sum(np.exp(v - m))))
    m = np.max(v, axis=axis, keepdims=True)
    safe_m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.squeeze(safe_m, axis=axis) + np.log(np.sum(np.exp(v - safe_m), axis=axis))
    reduced_max = np.squeeze(m, axis=axis)
    return np.where(np.isfinite(reduced_max), out, reduced_max)


def gaussian_log_density(x: np.ndarray, mu: np.ndarray, var: float) -> float:
    """Exact log N(x | mu, var*I) including all normalizing constants."""
    x = as_vec(x)
    mu = as_vec(mu)
    if x.shape != mu.shape:
        raise ShapeError(f"x {x.shape} vs mu {mu.shape}")
    if var <= 0:
        raise DomainError(f"variance must be positive, got {var}")
    d = x.shape[0]
    diff = x - mu
    return float(-0.5 * d * (LOG_2PI + np.log(var)) - diff @ diff / (2.0 * var))


def gaussian_log_density_diag(x: np.ndarray, mu: np.ndarray, var: np.ndarray,
                              axis: int = -1) -> np.ndarray:
    """log N(x | mu, diag(var)); broadcasts, reducing over `axis`.

    Generalizes `gaussian_log_density` to a per-coordinate variance vector,
    which is what a diagonal-covariance encoder posterior needs.
    """
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0):
        raise DomainError("all variances must be positive")
    diff = np.asarray(x, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    return -0.5 * np.sum(LOG_2PI + np.log(var) + diff * diff / var, axis=axis)


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    """Raise DomainError if `arr` contains NaN/Inf; returns `arr` unchanged."""
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{what} contains non-finite entries")
    return arr
