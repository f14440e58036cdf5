"""Adversarial rank objective on weight matrices.

The loss is the negative squared Frobenius distance between the l2-normalized
weight matrix and its best rank-k approximation, which collapses to the
negative tail energy of the normalized spectrum: -sum_{i>k} sigma_i^2.
Minimizing it (maximizing tail energy) pushes the matrix away from every
low-rank matrix at once, since truncated SVD is the closest one.

All functions operate on the effective (already masked) weight matrix and are
pure; per-layer calls may run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import SvdFactors, as_matrix, frobenius_norm, low_rank_error, svd

__all__ = [
    "RankLossConfig",
    "RankTerm",
    "DegenerateWeightError",
    "DegenerateSpectrumError",
    "normalize",
    "select_k",
    "rank_loss",
    "rank_loss_gradient",
    "delta_rank",
    "rank_step_preview",
    "layer_rank_term",
]

# Truncation boundary sigma_k == sigma_{k+1} makes the best rank-k
# approximation non-unique and the gradient undefined; gaps below this
# (on the normalized spectrum) are treated as degenerate.
SPECTRUM_GAP_TOL = 1e-10


class DegenerateWeightError(ValueError):
    """Weight norm at or below the floor; the rank term is meaningless."""


class DegenerateSpectrumError(ValueError):
    """sigma_k ~ sigma_{k+1}: truncated SVD non-unique, skip this step."""


@dataclass(frozen=True)
class RankLossConfig:
    """Knobs for the rank objective.

    target_error: desired approximation error of the adversary's low-rank fit,
        used to pick the truncation rank k per layer (in (0,1)).
    lam: weight of the rank loss in the combined objective (>= 0).
    delta_rank_tolerance: the delta used when *reporting* delta-ranks.
    norm_floor: matrices with Frobenius norm at or below this are treated as
        zero and skipped.
    """

    target_error: float = 0.2
    lam: float = 0.1
    delta_rank_tolerance: float = 0.1
    norm_floor: float = 1e-12

    def __post_init__(self):
        if not 0.0 < self.target_error < 1.0:
            raise ValueError(f"target_error must lie in (0,1), got {self.target_error}")
        if not (np.isfinite(self.lam) and self.lam >= 0.0):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        if not 0.0 < self.delta_rank_tolerance < 1.0:
            raise ValueError(
                f"delta_rank_tolerance must lie in (0,1), got {self.delta_rank_tolerance}"
            )
        if not self.norm_floor > 0.0:
            raise ValueError(f"norm_floor must be positive, got {self.norm_floor}")


def normalize(w, norm_floor: float = 1e-12) -> np.ndarray:
    """Scale a matrix to unit Frobenius norm, preserving direction."""
    w = as_matrix(w)
    norm = frobenius_norm(w)
    if norm <= norm_floor:
        raise DegenerateWeightError(
            f"Frobenius norm {norm} at or below floor {norm_floor}"
        )
    return w / norm


def select_k(sigma_normalized, target_error: float) -> int:
    """Pick the truncation rank whose tail energy is closest to target_error.

    Expects the singular values of a unit-norm matrix (squares summing to 1),
    descending. Searches k in {1, ..., r-1}; ties break toward smaller k, and
    r == 1 returns 1.
    """
    sigma = np.asarray(sigma_normalized, dtype=np.float64)
    if sigma.ndim != 1 or sigma.shape[0] < 1:
        raise ValueError("sigma_normalized must be a non-empty 1-D sequence")
    sq = sigma * sigma
    total = float(np.sum(sq))
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"spectrum is not normalized: sum of squares = {total}")
    r = sigma.shape[0]
    if r == 1:
        return 1
    # tails[k-1] = sum_{i>k} sigma_i^2 for k = 1..r-1
    tails = np.cumsum(sq[::-1])[::-1][1:]
    best = int(np.argmin(np.abs(tails - target_error)))
    return best + 1


def rank_loss(w, k: int, norm_floor: float = 1e-12) -> float:
    """Negative tail energy of the normalized spectrum: -sum_{i>k} sigma_i^2.

    Equal to the negative squared Frobenius distance between the normalized
    matrix and its best rank-k approximation. Lies in [-1, 0].
    """
    wbar = normalize(w, norm_floor)
    f = svd(wbar)
    if not 1 <= k < f.rank_bound:
        raise ValueError(f"k={k} outside [1, {f.rank_bound - 1}]")
    err = low_rank_error(f, k)
    return -(err * err)


def _tail_matrix(f: SvdFactors, k: int) -> np.ndarray:
    """T = sum_{i>k} 2 sigma_i u_i v_i^T on the normalized factors."""
    return 2.0 * (f.u[:, k:] * f.sigma[k:]) @ f.v[:, k:].T


def _check_gap(sigma: np.ndarray, k: int) -> None:
    if not sigma[k - 1] > sigma[k] + SPECTRUM_GAP_TOL:
        raise DegenerateSpectrumError(
            f"sigma_{k}={sigma[k - 1]} ~ sigma_{k + 1}={sigma[k]}: "
            "truncation boundary degenerate"
        )


def rank_loss_gradient(w, k: int, norm_floor: float = 1e-12) -> np.ndarray:
    """Gradient of rank_loss with respect to the raw (unnormalized) weight.

    G = -T/||W|| + W * sum(W . T)/||W||^3 with T = sum_{i>k} 2 sigma_i u_i v_i^T
    built from the normalized matrix's SVD. Homogeneous of degree -1 in W,
    since the loss itself is scale invariant.
    """
    w = as_matrix(w)
    wbar = normalize(w, norm_floor)
    f = svd(wbar)
    if not 1 <= k < f.rank_bound:
        raise ValueError(f"k={k} outside [1, {f.rank_bound - 1}]")
    _check_gap(f.sigma, k)
    norm = frobenius_norm(w)
    t = _tail_matrix(f, k)
    c = float(np.sum(w * t))
    return -t / norm + w * (c / norm**3)


def delta_rank(w, delta: float, norm_floor: float = 1e-12) -> int:
    """Smallest k whose best rank-k fit of the normalized matrix lands within delta.

    A zero matrix reports 0 by convention.
    """
    if not delta > 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    w = as_matrix(w)
    if frobenius_norm(w) <= norm_floor:
        return 0
    f = svd(normalize(w, norm_floor))
    for k in range(1, f.rank_bound + 1):
        if low_rank_error(f, k) < delta:
            return k
    return f.rank_bound


def rank_step_preview(w, k: int, gamma: float, norm_floor: float = 1e-12) -> np.ndarray:
    """Closed form of one plain gradient step on the rank loss.

    W' = U[(1 - c*gamma/||W||^3) Sigma + (2*gamma/||W||) SigmaBar_{[k+1:r]}] V^T
    with Sigma the raw singular values, SigmaBar the normalized ones, and
    c = sum(W . T). Identical (to rounding) to w - gamma*rank_loss_gradient(w, k);
    the shared U, V show the step preserves both singular subspaces while
    boosting the tail of the spectrum.
    """
    if not gamma >= 0.0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    w = as_matrix(w)
    if gamma == 0.0:
        return w.copy()
    wbar = normalize(w, norm_floor)
    f = svd(wbar)
    if not 1 <= k < f.rank_bound:
        raise ValueError(f"k={k} outside [1, {f.rank_bound - 1}]")
    _check_gap(f.sigma, k)
    norm = frobenius_norm(w)
    t = _tail_matrix(f, k)
    c = float(np.sum(w * t))
    diag = (1.0 - c * gamma / norm**3) * (f.sigma * norm)
    diag[k:] += (2.0 * gamma / norm) * f.sigma[k:]
    return (f.u * diag) @ f.v.T


@dataclass(frozen=True)
class RankTerm:
    """One layer's rank contribution at a mask-update step."""

    loss: float
    gradient: np.ndarray
    k: int


def layer_rank_term(w, cfg: RankLossConfig) -> RankTerm:
    """Loss, gradient and chosen k for one layer, sharing a single SVD.

    Equivalent to select_k + rank_loss + rank_loss_gradient composed; raises
    DegenerateWeightError / DegenerateSpectrumError for the caller to skip the
    layer this step. Matrices whose min dimension is 1 admit no k < r and also
    raise DegenerateSpectrumError.
    """
    w = as_matrix(w)
    wbar = normalize(w, cfg.norm_floor)
    f = svd(wbar)
    r = f.rank_bound
    if r < 2:
        raise DegenerateSpectrumError("rank bound 1: no k < r exists")
    k = select_k(f.sigma, cfg.target_error)
    _check_gap(f.sigma, k)
    err = low_rank_error(f, k)
    norm = frobenius_norm(w)
    t = _tail_matrix(f, k)
    c = float(np.sum(w * t))
    grad = -t / norm + w * (c / norm**3)
    return RankTerm(loss=-(err * err), gradient=grad, k=k)
