"""Bottleneck adapters with an optional channel-wise convolution stage.

An adapter is down-projection -> conv stage -> GeLU -> up-projection with
a residual connection around the whole block. ``kernel=None`` gives the
plain bottleneck adapter (no conv stage). Three conv recipes are
supported on the bottleneck channels:

  cw_single   one k x k depthwise conv
  dilated     one k x k depthwise conv with dilation 3
  cw_stacked  three sequential k x k depthwise convs

The up-projection weight is zero-initialized, so a fresh adapter is an
exact identity and fine-tuning starts at the frozen backbone's function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, GridError
from .layers import (
    DwConvParams,
    LinearParams,
    dwconv2d,
    gelu,
    init_dwconv,
    init_linear,
    linear,
)
from .tensor import Tensor, concat, reshape, slice_axis, transpose

RECIPES = ("cw_single", "dilated", "cw_stacked")

_STACK_DEPTH = 3
_DILATED_RATE = 3


@dataclass
class LkaConfig:
    """Adapter hyperparameters: embedding dim, bottleneck width, conv shape,
    and the token-grid geometry the conv operates on."""

    d: int
    d_hat: int
    kernel: int | None  # None => plain bottleneck adapter, no conv stage
    grid: tuple[int, int]
    recipe: str = "cw_single"
    cls_tokens: int = 0

    @property
    def spatial_tokens(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def seq_len(self) -> int:
        return self.spatial_tokens + self.cls_tokens

    def validate(self) -> None:
        if self.d_hat >= self.d:
            raise ConfigurationError(f"bottleneck width {self.d_hat} must be < embed dim {self.d}")
        if self.kernel is not None and self.kernel % 2 == 0:
            raise ConfigurationError(f"kernel must be odd, got {self.kernel}")
        if self.kernel is not None and self.recipe not in RECIPES:
            raise ConfigurationError(f"unknown recipe {self.recipe!r}; expected one of {RECIPES}")
        if self.grid[0] < 1 or self.grid[1] < 1:
            raise ConfigurationError(f"invalid token grid {self.grid}")
        if self.cls_tokens not in (0, 1):
            raise ConfigurationError(f"cls_tokens must be 0 or 1, got {self.cls_tokens}")


@dataclass
class AdapterParams:
    down: LinearParams  # [d -> d_hat]
    up: LinearParams  # [d_hat -> d]
    convs: list[DwConvParams] = field(default_factory=list)  # on d_hat channels

    def named(self) -> list[tuple[str, Tensor]]:
        out = [("down.weight", self.down.weight), ("down.bias", self.down.bias)]
        for i, c in enumerate(self.convs):
            out.append((f"conv.{i}.weight", c.weight))
            out.append((f"conv.{i}.bias", c.bias))
        out.append(("up.weight", self.up.weight))
        out.append(("up.bias", self.up.bias))
        return out


def _conv_stack_spec(cfg: LkaConfig) -> list[tuple[int, int]]:
    """(kernel, dilation) per conv layer for the configured recipe."""
    if cfg.kernel is None:
        return []
    if cfg.recipe == "cw_single":
        return [(cfg.kernel, 1)]
    if cfg.recipe == "dilated":
        return [(cfg.kernel, _DILATED_RATE)]
    if cfg.recipe == "cw_stacked":
        return [(cfg.kernel, 1)] * _STACK_DEPTH
    raise ConfigurationError(f"unknown recipe {cfg.recipe!r}")


def init_adapter(cfg: LkaConfig, seed) -> AdapterParams:
    """Seed-deterministic init: Kaiming-uniform down/conv weights, zero
    biases, and a zero up-projection (adapter starts as the identity)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    down = init_linear(rng, cfg.d, cfg.d_hat)
    convs = [init_dwconv(rng, cfg.d_hat, k, dil) for k, dil in _conv_stack_spec(cfg)]
    up = init_linear(rng, cfg.d_hat, cfg.d, zero_weight=True)
    return AdapterParams(down=down, convs=convs, up=up)


def lka_conv(h: Tensor, convs: list[DwConvParams], cfg: LkaConfig) -> Tensor:
    """Apply the conv stack to bottleneck tokens [B,T',d_hat], T' spatial only.

    Tokens are laid out on the configured (H_t, W_t) grid in row-major
    order. The plain-adapter configuration (no convs) is the identity.
    """
    if not convs:
        return h
    b, tp, dh = h.shape
    ht, wt = cfg.grid
    if tp != ht * wt:
        raise GridError(f"got {tp} spatial tokens for a {ht}x{wt} grid")
    img = reshape(transpose(h, (0, 2, 1)), (b, dh, ht, wt))
    for p in convs:
        img = dwconv2d(img, p)
    return transpose(reshape(img, (b, dh, ht * wt)), (0, 2, 1))


def adapter_forward(x: Tensor, p: AdapterParams, cfg: LkaConfig,
                    include_residual: bool = True) -> Tensor:
    """Bottleneck adapter: up(gelu(conv(down(x)))) + x.

    Class tokens (leading, per cfg.cls_tokens) bypass the conv stage in
    bottleneck space. ``include_residual=False`` yields the branch output
    alone, for use where an enclosing block supplies the skip.
    """
    h = linear(x, p.down)
    if p.convs:
        if cfg.cls_tokens:
            head = slice_axis(h, 1, 0, cfg.cls_tokens)
            tail = lka_conv(slice_axis(h, 1, cfg.cls_tokens, h.shape[1]), p.convs, cfg)
            h = concat([head, tail], axis=1)
        else:
            h = lka_conv(h, p.convs, cfg)
    out = linear(gelu(h), p.up)
    return out + x if include_residual else out


def adapter_param_count(cfg: LkaConfig) -> int:
    """Closed-form trainable-parameter count for one adapter.

    Plain adapter: 2*d*d_hat + d_hat + d. With an n-layer conv stack of
    kernel k: 2*d*d_hat + (n*k^2 + n + 1)*d_hat + d (n kernels, n conv
    biases, one down bias; up bias contributes the trailing d).
    """
    base = 2 * cfg.d * cfg.d_hat + cfg.d
    if cfg.kernel is None:
        return base + cfg.d_hat
    n = _STACK_DEPTH if cfg.recipe == "cw_stacked" else 1
    return base + (n * cfg.kernel * cfg.kernel + n + 1) * cfg.d_hat
