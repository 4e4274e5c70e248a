"""Dense real matrix primitives with max row-sum norm semantics.

All matrices are plain ``numpy.ndarray`` values, square, float64, row-major.
Systems in this package are small (n <= 16, typically 2x2), so there is no
sparse or structured path anywhere.
"""

from __future__ import annotations

import numpy as np


def as_matrix(m) -> np.ndarray:
    """Validate and return ``m`` as a square float64 array with finite entries."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


def mat_norm(m) -> float:
    """Max row-sum norm: max_i sum_j |m_ij| (the operator norm for max-norm vectors)."""
    a = as_matrix(m)
    return float(np.max(np.sum(np.abs(a), axis=1)))


def commutator(a, b) -> np.ndarray:
    """Return [a, b] = ab - ba."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a @ b - b @ a


def mat_pow(a, k: int) -> np.ndarray:
    """Return a**k for integer k >= 0, with a**0 = identity.

    Uses a plain left-to-right product so repeated powers of the same matrix
    are consistent with incrementally built power tables.
    """
    a = as_matrix(a)
    if int(k) != k or k < 0:
        raise ValueError(f"power must be a nonnegative integer, got {k!r}")
    out = np.eye(a.shape[0])
    for _ in range(int(k)):
        out = out @ a
    return out
