"""Small deterministic numerical utilities shared across the package.

Matrices here are plain numpy arrays, small (3x3 covariances, basis design
blocks), and everything is written for clarity and bit-reproducibility
rather than throughput.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

# Fixed generator so simulated cohorts and weight draws are reproducible
# across platforms for a given seed.
RNG_ALGORITHM = "numpy-pcg64"


class NotPositiveDefinite(Exception):
    """A pivot <= 0 turned up during Cholesky: degenerate covariance."""


class NonFiniteEvaluation(Exception):
    """Objective returned nan/inf during finite differencing."""


def seeded_rng(seed: int) -> np.random.Generator:
    """Return a PCG64 generator; equal seeds give equal streams everywhere."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def cholesky_spd(m: np.ndarray, sym_tol: float = 1e-10) -> np.ndarray:
    """Lower-triangular L with L @ L.T == m for a symmetric PD matrix.

    Raises NotPositiveDefinite when a pivot is <= 0; the caller is expected
    to jitter the diagonal and retry.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if np.max(np.abs(a - a.T)) > sym_tol:
        raise ValueError("matrix is not symmetric within tolerance")
    n = a.shape[0]
    lower = np.zeros_like(a)
    for i in range(n):
        for j in range(i + 1):
            s = a[i, j] - lower[i, :j] @ lower[j, :j]
            if i == j:
                if s <= 0.0:
                    raise NotPositiveDefinite(
                        f"pivot {s!r} at row {i}; matrix is not positive definite"
                    )
                lower[i, i] = math.sqrt(s)
            else:
                lower[i, j] = s / lower[j, j]
    return lower


def spd_inverse(m: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via Cholesky."""
    lower = cholesky_spd(m)
    n = lower.shape[0]
    eye = np.eye(n)
    # Forward solve L Z = I, then back solve L.T X = Z, column by column.
    z = np.zeros((n, n))
    for i in range(n):
        z[i] = (eye[i] - lower[i, :i] @ z[:i]) / lower[i, i]
    x = np.zeros((n, n))
    for i in range(n - 1, -1, -1):
        x[i] = (z[i] - lower[i + 1:, i] @ x[i + 1:]) / lower[i, i]
    return (x + x.T) / 2.0


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step.flat[i] = h
        fp = float(f(x + step))
        fm = float(f(x - step))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteEvaluation(f"f non-finite near coordinate {i}")
        grad.flat[i] = (fp - fm) / (2.0 * h)
    return grad
