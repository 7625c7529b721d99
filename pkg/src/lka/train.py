"""Frozen-backbone training and evaluation loops.

The loop is deterministic given (seed, config, dataset): each epoch's
sample permutation derives from (seed, epoch index) alone, so a run can
be resumed from any global step and reproduce the exact remaining batch
sequence. Only parameters flagged trainable are updated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backbone import Model, model_forward, trainable_params
from .data import Dataset
from .errors import ContractError
from .layers import cross_entropy
from .optim import AdamState, TrainConfig, adamw_step, cosine_lr
from .tensor import Tensor, backward, no_grad, zero_grad

_SHUFFLE_STREAM = 7


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    top1: float


@dataclass
class TrainResult:
    history: list[EpochMetrics] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    state: AdamState = field(default_factory=AdamState)
    steps: int = 0


def _epoch_perm(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SHUFFLE_STREAM, epoch]))
    return rng.permutation(n)


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def train(model: Model, ds: Dataset, cfg: TrainConfig, *,
          state: AdamState | None = None, start_step: int = 0,
          max_steps: int | None = None) -> TrainResult:
    """Cross-entropy training over shuffled mini-batches with AdamW and the
    warmup+cosine schedule. Resuming: pass the loaded optimizer state and
    its step counter as ``start_step``; ``max_steps`` caps the number of
    additional steps (epoch metrics cover completed epochs only)."""
    cfg.validate()
    n = len(ds)
    if n == 0:
        raise ContractError("cannot train on an empty dataset")
    spe = steps_per_epoch(n, cfg.batch_size)
    total_steps = cfg.epochs * spe
    warmup_steps = cfg.warmup * spe
    end_step = total_steps if max_steps is None else min(total_steps, start_step + max_steps)

    params = trainable_params(model)
    result = TrainResult(state=state if state is not None else AdamState())

    perm = None
    epoch_loss = 0.0
    epoch_hits = 0
    epoch_seen = 0
    for step in range(start_step, end_step):
        epoch, i = divmod(step, spe)
        if perm is None or i == 0:
            perm = _epoch_perm(cfg.seed, epoch, n)
            epoch_loss, epoch_hits, epoch_seen = 0.0, 0, 0
        idx = perm[i * cfg.batch_size:(i + 1) * cfg.batch_size]
        x = Tensor(ds.images[idx])
        y = ds.labels[idx]
        logits = model_forward(model, x)
        loss = cross_entropy(logits, y)
        zero_grad(t for _, t in params)
        backward(loss)
        lr = cosine_lr(step + 1, total_steps, warmup_steps, cfg.lr_max, cfg.lr_min)
        grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for _, t in params]
        adamw_step(params, grads, result.state, lr, cfg)

        lval = float(loss.data)
        if not math.isfinite(lval):
            raise ContractError(f"non-finite loss {lval} at step {step}")
        result.step_losses.append(lval)
        epoch_loss += lval * len(idx)
        epoch_hits += int((np.argmax(logits.data, axis=1) == y).sum())
        epoch_seen += len(idx)
        if i == spe - 1:
            result.history.append(EpochMetrics(
                epoch=epoch, loss=epoch_loss / epoch_seen, top1=epoch_hits / epoch_seen))
        result.steps = step + 1
    return result


def evaluate(model: Model, ds: Dataset, batch_size: int = 256) -> float:
    """Top-1 accuracy; argmax ties resolve to the lowest class index."""
    n = len(ds)
    if n == 0:
        raise ContractError("cannot evaluate an empty dataset")
    hits = 0
    with no_grad():
        for lo in range(0, n, batch_size):
            hi = min(lo + batch_size, n)
            logits = model_forward(model, Tensor(ds.images[lo:hi]))
            hits += int((np.argmax(logits.data, axis=1) == ds.labels[lo:hi]).sum())
    return hits / n
