"""Dense matrix helpers: Frobenius norms, SVD, and truncated low-rank approximation.

Matrices are plain 2-D float64 ndarrays. All functions are pure and safe to
call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SvdFactors",
    "as_matrix",
    "frobenius_norm",
    "svd",
    "truncate",
    "low_rank_error",
]


def as_matrix(values) -> np.ndarray:
    """Validate and return a 2-D float64 matrix with finite entries."""
    w = np.asarray(values, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {w.shape}")
    if w.shape[0] < 1 or w.shape[1] < 1:
        raise ValueError(f"matrix dimensions must be positive, got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("matrix contains non-finite entries")
    return w


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD of an m-by-n matrix: ``u @ diag(sigma) @ v.T`` reconstructs it.

    u is m-by-r and v is n-by-r with orthonormal columns; sigma holds the
    r = min(m, n) singular values in descending order.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @property
    def rank_bound(self) -> int:
        return len(self.sigma)


def frobenius_norm(w) -> float:
    """Square root of the sum of squared entries."""
    w = np.asarray(w, dtype=np.float64)
    return float(np.sqrt(np.sum(w * w)))


def svd(w) -> SvdFactors:
    """Thin SVD with a deterministic sign convention.

    The sign of each left singular vector is fixed so that its first nonzero
    entry is non-negative (the matching right vector is flipped with it),
    which makes repeated calls on identical input bitwise reproducible.
    """
    w = as_matrix(w)
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    v = vt.T.copy()
    u = u.copy()
    for i in range(s.shape[0]):
        col = u[:, i]
        nonzero = np.nonzero(col)[0]
        if nonzero.size and col[nonzero[0]] < 0.0:
            u[:, i] = -col
            v[:, i] = -v[:, i]
    return SvdFactors(u=u, sigma=s, v=v)


def truncate(f: SvdFactors, k: int) -> np.ndarray:
    """Best rank-k approximation: sum of the top-k singular triplets."""
    r = f.rank_bound
    if not 1 <= k <= r:
        raise ValueError(f"truncation rank k={k} outside [1, {r}]")
    return (f.u[:, :k] * f.sigma[:k]) @ f.v[:, :k].T


def low_rank_error(f: SvdFactors, k: int) -> float:
    """Frobenius distance from the matrix to its best rank-k approximation.

    Equals sqrt(sum of squared singular values past k); k may be 0 (distance
    to the zero matrix) up to r (which gives 0).
    """
    r = f.rank_bound
    if not 0 <= k <= r:
        raise ValueError(f"rank k={k} outside [0, {r}]")
    tail = f.sigma[k:]
    return float(np.sqrt(np.sum(tail * tail)))
