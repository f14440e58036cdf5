"""Two-stage sparse training: gradual prune-and-grow, then fixed-mask finetune.

Stage 1 walks the sparsity schedule. At every mask-update step the gradient of
the combined objective (task loss plus lambda times the per-layer rank loss)
is computed once and used both to regrow connections and to update weights;
on all other steps only the task loss trains the active weights, which keeps
the SVD cost amortized over the update interval. Stage 2 freezes the masks and
finetunes.

Batch selection is stateless: step t draws its indices from a generator seeded
by (seed, t), so resuming from a checkpoint is bitwise identical to never
having stopped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import model, rank, sparsity
from .model import Batch, Network, accuracy, backward, forward, matrix_to_tensor, task_loss
from .rank import DegenerateSpectrumError, DegenerateWeightError, RankLossConfig
from .sparsity import GrowSchedule, ScheduleError, SparsitySchedule

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "MetricsRecord",
    "TrainResult",
    "combined_gradient",
    "sgd_step",
    "train",
    "average_delta_rank",
]


@dataclass(frozen=True)
class TrainConfig:
    schedule: SparsitySchedule
    grow: GrowSchedule
    rank_cfg: RankLossConfig
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 32
    seed: int = 0
    cosine_lr: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0,1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.schedule.prune_steps % self.schedule.update_interval != 0:
            # final sparsity is only reached at an update step; an indivisible
            # pair would silently end the ramp short of the target
            raise ScheduleError(
                f"prune_steps {self.schedule.prune_steps} must be a multiple of "
                f"update_interval {self.schedule.update_interval}"
            )


@dataclass
class OptimizerState:
    """Momentum buffers, one per weight/bias tensor."""

    weight_buffers: list[np.ndarray]
    bias_buffers: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: Network) -> "OptimizerState":
        return cls(
            weight_buffers=[np.zeros_like(l.params.weight) for l in net.layers],
            bias_buffers=[np.zeros_like(l.bias) for l in net.layers],
        )

    def mask_pruned(self, net: Network) -> None:
        """Zero buffers at masked positions so regrown weights restart cold."""
        for buf, layer in zip(self.weight_buffers, net.layers):
            buf *= layer.params.mask


@dataclass
class MetricsRecord:
    step: int
    sparsity: float
    task_loss: float
    rank_loss: float | None
    avg_delta_rank: float | None
    train_acc: float
    eval_acc: float | None

    CSV_HEADER = "step,sparsity,task_loss,rank_loss,avg_delta_rank,train_acc,eval_acc"

    def csv_row(self) -> str:
        def cell(x):
            return "" if x is None else repr(x)

        return ",".join(
            [
                str(self.step),
                repr(self.sparsity),
                repr(self.task_loss),
                cell(self.rank_loss),
                cell(self.avg_delta_rank),
                repr(self.train_acc),
                cell(self.eval_acc),
            ]
        )


@dataclass
class TrainResult:
    net: Network
    metrics: list[MetricsRecord]
    optimizer: OptimizerState
    final_step: int


def _batch_indices(seed: int, step: int, n: int, batch_size: int) -> np.ndarray:
    """Deterministic with-replacement draw for one step, independent of history."""
    rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence([seed, 1, step])))
    return rng.integers(0, n, size=batch_size)


def combined_gradient(net: Network, batch: Batch, rank_cfg: RankLossConfig):
    """Dense gradients of task loss + lambda * sum of layer rank losses.

    Returns (grads, rank_loss_sum) where grads is a list of (dweight, dbias)
    per layer, with the rank term mapped back through the conv reshape.
    Layers whose weight is degenerate (near-zero norm, tied spectrum at the
    truncation boundary, or rank bound 1) contribute task gradient only.
    """
    logits, cache = forward(net, batch)
    grads = backward(net, cache, batch.labels)
    lam = rank_cfg.lam
    rank_loss_sum = 0.0
    for idx, layer in enumerate(net.layers):
        try:
            term = rank.layer_rank_term(model.reshape_to_matrix(layer), rank_cfg)
        except (DegenerateWeightError, DegenerateSpectrumError) as exc:
            logger.info("rank term skipped for %s: %s", layer.name, exc)
            continue
        rank_loss_sum += term.loss
        if lam != 0.0:
            dw, db = grads[idx]
            rank_grad = matrix_to_tensor(term.gradient, layer.params.weight.shape)
            grads[idx] = (dw + lam * rank_grad, db)
    return grads, rank_loss_sum


def sgd_step(net: Network, grads, opt: OptimizerState, lr: float, momentum: float, weight_decay: float) -> None:
    """Momentum SGD with weight decay on active weights and biases.

    Masked positions receive no update and their stored values stay zero.
    """
    for layer, (dw, db), wbuf, bbuf in zip(net.layers, grads, opt.weight_buffers, opt.bias_buffers):
        m = layer.params.mask
        g = (dw + weight_decay * layer.params.weight) * m
        wbuf *= momentum
        wbuf += g
        layer.params.weight = layer.params.weight - lr * wbuf
        gb = db + weight_decay * layer.bias
        bbuf *= momentum
        bbuf += gb
        layer.bias = layer.bias - lr * bbuf
    net.touch()


def average_delta_rank(net: Network, delta: float) -> float:
    """Mean delta-rank of the effective weight matrices over all prunable layers."""
    ranks = [
        rank.delta_rank(model.reshape_to_matrix(layer), delta) for layer in net.layers
    ]
    return float(np.mean(ranks))


def _rank_loss_total(net: Network, rank_cfg: RankLossConfig) -> float:
    total = 0.0
    for layer in net.layers:
        try:
            term = rank.layer_rank_term(model.reshape_to_matrix(layer), rank_cfg)
        except (DegenerateWeightError, DegenerateSpectrumError):
            continue
        total += term.loss
    return total


def _evaluate(net: Network, inputs: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    logits, _ = forward(net, Batch(inputs, labels))
    return accuracy(logits, labels)


def train(
    net: Network,
    dataset,
    cfg: TrainConfig,
    start_step: int = 0,
    optimizer: OptimizerState | None = None,
    stop_after: int | None = None,
) -> TrainResult:
    """Run steps start_step+1 .. total_steps (or stop_after) of the schedule.

    dataset provides train_x/train_y/eval_x/eval_y arrays. Metrics rows are
    appended every step; rank metrics and eval accuracy are recorded at
    update-interval boundaries and on the final step. Schedule problems raise,
    they are never clamped away.
    """
    sched = cfg.schedule
    opt = optimizer if optimizer is not None else OptimizerState.zeros_like(net)
    n = dataset.train_x.shape[0]
    if n < 1:
        raise ValueError("dataset is empty")
    last = sched.total_steps if stop_after is None else min(stop_after, sched.total_steps)
    metrics: list[MetricsRecord] = []
    step = start_step
    for step in range(start_step + 1, last + 1):
        idx = _batch_indices(cfg.seed, step, n, cfg.batch_size)
        batch = Batch(dataset.train_x[idx], dataset.train_y[idx])
        lr = cfg.learning_rate
        if cfg.cosine_lr:
            lr = lr * 0.5 * (1.0 + np.cos(np.pi * step / sched.total_steps))

        update_step = step % sched.update_interval == 0
        mask_step = update_step and step <= sched.prune_steps
        rank_loss_sum = None
        if mask_step:
            grads, rank_loss_sum = combined_gradient(net, batch, cfg.rank_cfg)
            logits, cache = forward(net, batch)
            loss = task_loss(logits, batch.labels)
            acc = accuracy(logits, batch.labels)
            dense_grads = [dw for dw, _ in grads]
            sparsity.update_masks(net, dense_grads, sched, cfg.grow, step)
            net.touch()
            opt.mask_pruned(net)
            sgd_step(net, grads, opt, lr, cfg.momentum, cfg.weight_decay)
        else:
            logits, cache = forward(net, batch)
            loss = task_loss(logits, batch.labels)
            acc = accuracy(logits, batch.labels)
            grads = backward(net, cache, batch.labels)
            sgd_step(net, grads, opt, lr, cfg.momentum, cfg.weight_decay)

        record_rank = update_step or step == sched.total_steps
        if record_rank and rank_loss_sum is None:
            rank_loss_sum = _rank_loss_total(net, cfg.rank_cfg)
        metrics.append(
            MetricsRecord(
                step=step,
                sparsity=net.sparsity(),
                task_loss=loss,
                rank_loss=rank_loss_sum if record_rank else None,
                avg_delta_rank=(
                    average_delta_rank(net, cfg.rank_cfg.delta_rank_tolerance)
                    if record_rank
                    else None
                ),
                train_acc=acc,
                eval_acc=(
                    _evaluate(net, dataset.eval_x, dataset.eval_y) if record_rank else None
                ),
            )
        )
    return TrainResult(net=net, metrics=metrics, optimizer=opt, final_step=step)
