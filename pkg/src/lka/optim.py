"""AdamW with decoupled weight decay and the warmup + cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError
from .tensor import Tensor


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    warmup_epochs: float | None = None  # None => 5% of epochs
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    @property
    def warmup(self) -> float:
        return 0.05 * self.epochs if self.warmup_epochs is None else self.warmup_epochs

    def validate(self) -> None:
        if self.lr_min > self.lr_max:
            raise ConfigurationError(f"lr_min {self.lr_min} exceeds lr_max {self.lr_max}")
        if not 0 <= self.warmup < self.epochs:
            raise ConfigurationError(
                f"warmup ({self.warmup} epochs) must lie in [0, epochs={self.epochs})")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(params: list[tuple[str, Tensor]], grads: list[np.ndarray],
               state: AdamState, lr: float, cfg: TrainConfig) -> None:
    """One AdamW update in place: decoupled decay theta *= (1 - lr*wd),
    then the bias-corrected Adam moment step."""
    if len(params) != len(grads):
        raise ContractError(f"{len(params)} params but {len(grads)} grads")
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for (name, p), g in zip(params, grads):
        if g.shape != p.data.shape:
            raise ContractError(f"gradient shape {g.shape} != param {name} shape {p.data.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        p.data *= 1.0 - lr * cfg.weight_decay
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def cosine_lr(step: float, total: float, warmup: float, lr_max: float, lr_min: float) -> float:
    """Linear ramp 0 -> lr_max over warmup steps, then cosine to lr_min."""
    if step < warmup:
        return lr_max * step / warmup
    if total <= warmup:
        return lr_min
    progress = (step - warmup) / (total - warmup)
    return lr_min + (lr_max - lr_min) * (1.0 + math.cos(math.pi * progress)) / 2.0
