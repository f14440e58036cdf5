"""Gradual-sparsity schedules and prune-and-grow mask updates.

Masks are float64 arrays of exact 0.0/1.0 entries with the same shape as their
weight tensor. Every mask update first splits a global keep budget across
layers by sorting all effective magnitudes together, then per layer prunes the
smallest active weights down to (1 - alpha_t) of the layer budget and regrows
back up to the budget at the positions with the largest gradient magnitude.
Regrown weights start at zero so the loss is untouched at the instant of
growth.

Schedule and split functions are pure; update_masks mutates the network's
masks and must be externally serialized (single writer).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SparsitySchedule",
    "GrowSchedule",
    "ScheduleError",
    "target_sparsity",
    "grow_fraction",
    "layer_budget",
    "global_density_split",
    "prune_layer",
    "grow_layer",
    "update_masks",
]


class ScheduleError(ValueError):
    """A mask update was asked to do something the schedule forbids."""


@dataclass(frozen=True)
class SparsitySchedule:
    """Gradual schedule: sparsity ramps to final_sparsity over prune_steps.

    update_interval is the gap between mask updates; total_steps covers the
    fixed-mask finetuning tail as well.
    """

    final_sparsity: float
    prune_steps: int
    update_interval: int
    total_steps: int
    shape: str = "cubic"  # cubic | linear

    def __post_init__(self):
        if not 0.0 <= self.final_sparsity < 1.0:
            raise ValueError(f"final_sparsity must lie in [0,1), got {self.final_sparsity}")
        if self.prune_steps < 1 or self.update_interval < 1:
            raise ValueError("prune_steps and update_interval must be positive")
        if self.total_steps < self.prune_steps:
            raise ValueError(
                f"total_steps {self.total_steps} < prune_steps {self.prune_steps}"
            )
        if self.shape not in ("cubic", "linear"):
            raise ValueError(f"unknown schedule shape {self.shape!r}")


@dataclass(frozen=True)
class GrowSchedule:
    """Cosine-annealed grow fraction, alpha0 at step 0 down to 0 at prune_steps."""

    alpha0: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.alpha0 < 1.0:
            raise ValueError(f"alpha0 must lie in (0,1), got {self.alpha0}")


def target_sparsity(s: SparsitySchedule, t: int) -> float:
    """Scheduled sparsity at step t; flat at final_sparsity after prune_steps."""
    if t < 0:
        raise ValueError(f"step index must be >= 0, got {t}")
    frac = min(t, s.prune_steps) / s.prune_steps
    if s.shape == "linear":
        return s.final_sparsity * frac
    return s.final_sparsity * (1.0 - (1.0 - frac) ** 3)


def grow_fraction(g: GrowSchedule, s: SparsitySchedule, t: int) -> float:
    """Fraction of the budget reopened for regrowth at step t."""
    if t < 0:
        raise ValueError(f"step index must be >= 0, got {t}")
    frac = min(t, s.prune_steps) / s.prune_steps
    return g.alpha0 / 2.0 * (1.0 + math.cos(math.pi * frac))


def layer_budget(density: float, size: int) -> int:
    """Active-weight budget for a layer: ceil(density*size), floored at 1.

    The small slack absorbs float dust when density was itself derived from an
    integer count divided by size, so an exact count never rounds up.
    """
    return min(size, max(1, math.ceil(density * size - 1e-9)))


def global_density_split(weights, density: float, masks=None) -> list[float]:
    """Split a global keep budget over layers by magnitude.

    Concatenates |effective weight| over all layers, keeps the top
    ceil(density * total) entries, and returns each layer's kept fraction.
    Ties sort by mask (active before masked, when masks are given) and then by
    concatenation order, so repeated calls on the same state agree. Every
    layer keeps at least one weight.
    """
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must lie in (0,1], got {density}")
    mags = np.concatenate([np.abs(np.asarray(w, dtype=np.float64)).ravel() for w in weights])
    total = mags.shape[0]
    budget = min(total, math.ceil(density * total - 1e-9))
    if masks is not None:
        active = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in masks])
        order = np.lexsort((-active, -mags))  # primary: magnitude desc, then active first
    else:
        order = np.argsort(-mags, kind="stable")
    keep = np.zeros(total, dtype=bool)
    keep[order[:budget]] = True

    densities = []
    start = 0
    for w in weights:
        size = int(np.asarray(w).size)
        kept = int(np.count_nonzero(keep[start : start + size]))
        densities.append(max(kept, 1) / size)
        start += size
    return densities


def _active_flat(m: np.ndarray) -> np.ndarray:
    flat = np.asarray(m, dtype=np.float64).ravel()
    return np.nonzero(flat == 1.0)[0]


def prune_layer(w, m, keep_density: float) -> np.ndarray:
    """Keep the top active weights by magnitude, zero the rest of the mask.

    The keep budget is ceil(keep_density * size). Ties break toward the
    smaller flat index.
    """
    w = np.asarray(w, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if not 0.0 < keep_density <= 1.0:
        raise ValueError(f"keep_density must lie in (0,1], got {keep_density}")
    size = w.size
    budget = layer_budget(keep_density, size)
    active = _active_flat(m)
    if budget > active.shape[0]:
        raise ScheduleError(
            f"prune keep budget {budget} exceeds active count {active.shape[0]}"
        )
    mags = np.abs(w.ravel()[active])
    # stable sort on -|w|: ties keep the smaller flat index
    order = np.argsort(-mags, kind="stable")
    new_mask = np.zeros(size, dtype=np.float64)
    new_mask[active[order[:budget]]] = 1.0
    return new_mask.reshape(w.shape)


def grow_layer(dense_grad, m, target_density: float) -> np.ndarray:
    """Reactivate inactive positions with the largest gradient magnitude.

    Grows the mask up to ceil(target_density * size) active entries; ties
    break toward the smaller flat index. Weight values at grown positions are
    zero by construction (pruning zeroes stored values), so growth leaves the
    forward pass unchanged until the next optimizer step.
    """
    g = np.asarray(dense_grad, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    size = g.size
    budget = layer_budget(target_density, size)
    flat = m.ravel()
    active_count = int(np.count_nonzero(flat == 1.0))
    if budget < active_count:
        raise ScheduleError(
            f"grow target {budget} below current active count {active_count}"
        )
    inactive = np.nonzero(flat == 0.0)[0]
    need = budget - active_count
    mags = np.abs(g.ravel()[inactive])
    order = np.argsort(-mags, kind="stable")
    new_mask = flat.copy()
    new_mask[inactive[order[:need]]] = 1.0
    return new_mask.reshape(g.shape)


def update_masks(net, dense_grads, schedule: SparsitySchedule, grow: GrowSchedule, t: int) -> list[np.ndarray]:
    """One prune-and-grow pass over every prunable layer at step t.

    dense_grads holds the combined-objective gradient of each layer's
    effective weight, defined at all positions. Mutates the network: new masks
    are installed and stored weights at pruned positions are zeroed. Returns
    the new masks.
    """
    if t % schedule.update_interval != 0:
        raise ScheduleError(f"step {t} is not a multiple of {schedule.update_interval}")
    if t > schedule.prune_steps:
        raise ScheduleError(f"step {t} is past prune_steps {schedule.prune_steps}")
    layers = net.prunable
    if len(dense_grads) != len(layers):
        raise ValueError("one dense gradient per prunable layer required")
    density = 1.0 - target_sparsity(schedule, t)
    if density <= 0.0:
        raise ScheduleError(f"scheduled density {density} at step {t} is not positive")
    effective = [p.effective() for p in layers]
    densities = global_density_split(effective, density, masks=[p.mask for p in layers])
    alpha = grow_fraction(grow, schedule, t)
    new_masks = []
    for p, grad, d in zip(layers, dense_grads, densities):
        pruned = prune_layer(p.effective(), p.mask, (1.0 - alpha) * d)
        p.set_mask(pruned)  # zero stored values now so same-step regrowth restarts cold
        grown = grow_layer(grad, pruned, d)
        p.set_mask(grown)
        new_masks.append(grown)
    return new_masks
