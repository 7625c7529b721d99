"""Miniature ViT-style backbone: patch embedding, pre-norm transformer
blocks with adapters in one of three placements, and a linear head.

Placements:
  parallel_a    adapter branch (no internal residual) added in parallel
                with MSA and with MLP, sharing their LayerNorm inputs
  seq_before_b  adapter (with residual) applied to the MSA/MLP output
                before the block's skip connection
  seq_after_c   adapter (with residual) applied after the skip connection

Modes set trainable flags: lka_tuning trains adapters + head, linear_probe
trains the head only, full_ft trains everything. Frozen parameters carry
``requires_grad=False`` and never receive gradients.

The backbone has no positional embedding: spatial structure enters only
through patch locality and the adapters' convolutions. Classification
mean-pools the spatial tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adapters import AdapterParams, LkaConfig, adapter_forward, init_adapter
from .errors import ConfigurationError, DimensionError
from .layers import (
    LayerNormParams,
    LinearParams,
    MlpParams,
    MsaParams,
    init_layernorm,
    init_linear,
    init_mlp,
    init_msa,
    layernorm,
    linear,
    mlp,
    msa,
)
from .tensor import Tensor, concat, broadcast_to, reduce_mean, reshape, slice_axis, transpose

PLACEMENTS = ("parallel_a", "seq_before_b", "seq_after_c")
MODES = ("lka_tuning", "linear_probe", "full_ft")

_BACKBONE_STREAM = 0
_ADAPTER_STREAM = 1
_HEAD_STREAM = 2


@dataclass
class BlockParams:
    ln1: LayerNormParams
    msa: MsaParams
    ln2: LayerNormParams
    mlp: MlpParams
    adapter_msa: AdapterParams | None = None
    adapter_ffn: AdapterParams | None = None


@dataclass
class ModelConfig:
    image_size: int
    patch_size: int
    embed_dim: int
    depth: int
    heads: int
    classes: int
    mlp_ratio: float = 4.0
    in_channels: int = 1
    cls_tokens: int = 0
    placement: str = "parallel_a"
    mode: str = "lka_tuning"
    lka: LkaConfig | None = None  # None => adapter-free backbone

    @property
    def grid(self) -> tuple[int, int]:
        g = self.image_size // self.patch_size
        return (g, g)

    @property
    def seq_len(self) -> int:
        return self.grid[0] * self.grid[1] + self.cls_tokens

    def validate(self) -> None:
        if self.image_size % self.patch_size != 0:
            raise ConfigurationError(
                f"image size {self.image_size} not divisible by patch size {self.patch_size}")
        if self.embed_dim % self.heads != 0:
            raise ConfigurationError(
                f"embed dim {self.embed_dim} not divisible by {self.heads} heads")
        if self.placement not in PLACEMENTS:
            raise ConfigurationError(f"unknown placement {self.placement!r}; expected one of {PLACEMENTS}")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.cls_tokens not in (0, 1):
            raise ConfigurationError(f"cls_tokens must be 0 or 1, got {self.cls_tokens}")
        if self.depth < 1 or self.classes < 1:
            raise ConfigurationError("depth and classes must be positive")
        if self.lka is not None:
            self.lka.validate()
            if self.lka.d != self.embed_dim:
                raise ConfigurationError(
                    f"adapter dim {self.lka.d} does not match embed dim {self.embed_dim}")
            if self.lka.grid != self.grid:
                raise ConfigurationError(
                    f"adapter grid {self.lka.grid} does not match model grid {self.grid}")
            if self.lka.cls_tokens != self.cls_tokens:
                raise ConfigurationError("adapter and model disagree on cls token count")


def make_config(image_size: int, patch_size: int, embed_dim: int, depth: int,
                heads: int, classes: int, *, mlp_ratio: float = 4.0,
                in_channels: int = 1, cls_tokens: int = 0,
                placement: str = "parallel_a", mode: str = "lka_tuning",
                bottleneck: int | None = 8, kernel: int | None = 7,
                recipe: str = "cw_single") -> ModelConfig:
    """Assemble a ModelConfig plus matching LkaConfig.

    ``bottleneck=None`` builds the adapter-free backbone; ``kernel=None``
    with a bottleneck builds plain (conv-free) adapters.
    """
    g = image_size // patch_size
    lka = None
    if bottleneck is not None:
        lka = LkaConfig(d=embed_dim, d_hat=bottleneck, kernel=kernel,
                        grid=(g, g), recipe=recipe, cls_tokens=cls_tokens)
    return ModelConfig(image_size=image_size, patch_size=patch_size,
                       embed_dim=embed_dim, depth=depth, heads=heads,
                       classes=classes, mlp_ratio=mlp_ratio,
                       in_channels=in_channels, cls_tokens=cls_tokens,
                       placement=placement, mode=mode, lka=lka)


@dataclass
class Model:
    config: ModelConfig
    patch_embed: LinearParams
    blocks: list[BlockParams]
    norm: LayerNormParams
    head: LinearParams
    cls_token: Tensor | None = None
    registry: dict[str, Tensor] = field(default_factory=dict)


def _register(registry: dict[str, Tensor], name: str, t: Tensor) -> None:
    if name in registry:
        raise ConfigurationError(f"duplicate parameter name {name!r}")
    registry[name] = t


def build_model(cfg: ModelConfig, seed: int) -> Model:
    """Deterministically initialize a model and its parameter registry.

    Backbone, adapter, and head parameters draw from independent seed
    substreams, so models that share a seed share backbone weights
    bit-exactly regardless of adapter configuration.
    """
    cfg.validate()
    rng_backbone = np.random.default_rng(np.random.SeedSequence([seed, _BACKBONE_STREAM]))
    rng_adapter = np.random.default_rng(np.random.SeedSequence([seed, _ADAPTER_STREAM]))
    rng_head = np.random.default_rng(np.random.SeedSequence([seed, _HEAD_STREAM]))

    d = cfg.embed_dim
    patch_in = cfg.in_channels * cfg.patch_size * cfg.patch_size
    patch_embed = init_linear(rng_backbone, patch_in, d)
    cls_token = Tensor(rng_backbone.normal(0.0, 0.02, size=(1, 1, d))) if cfg.cls_tokens else None

    blocks = []
    for _ in range(cfg.depth):
        bp = BlockParams(
            ln1=init_layernorm(d),
            msa=init_msa(rng_backbone, d, cfg.heads),
            ln2=init_layernorm(d),
            mlp=init_mlp(rng_backbone, d, cfg.mlp_ratio),
        )
        if cfg.lka is not None:
            bp.adapter_msa = init_adapter(cfg.lka, rng_adapter)
            bp.adapter_ffn = init_adapter(cfg.lka, rng_adapter)
        blocks.append(bp)

    norm = init_layernorm(d)
    head = init_linear(rng_head, d, cfg.classes)

    m = Model(config=cfg, patch_embed=patch_embed, blocks=blocks, norm=norm,
              head=head, cls_token=cls_token)
    reg = m.registry
    _register(reg, "patch_embed.weight", patch_embed.weight)
    _register(reg, "patch_embed.bias", patch_embed.bias)
    if cls_token is not None:
        _register(reg, "cls_token", cls_token)
    for i, bp in enumerate(blocks):
        pre = f"blocks.{i}"
        _register(reg, f"{pre}.ln1.gamma", bp.ln1.gamma)
        _register(reg, f"{pre}.ln1.beta", bp.ln1.beta)
        for attr in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
            _register(reg, f"{pre}.msa.{attr}", getattr(bp.msa, attr))
        _register(reg, f"{pre}.ln2.gamma", bp.ln2.gamma)
        _register(reg, f"{pre}.ln2.beta", bp.ln2.beta)
        _register(reg, f"{pre}.mlp.fc1.weight", bp.mlp.fc1.weight)
        _register(reg, f"{pre}.mlp.fc1.bias", bp.mlp.fc1.bias)
        _register(reg, f"{pre}.mlp.fc2.weight", bp.mlp.fc2.weight)
        _register(reg, f"{pre}.mlp.fc2.bias", bp.mlp.fc2.bias)
        for tag, ap in (("adapter_msa", bp.adapter_msa), ("adapter_ffn", bp.adapter_ffn)):
            if ap is not None:
                for sub, t in ap.named():
                    _register(reg, f"{pre}.{tag}.{sub}", t)
    _register(reg, "norm.gamma", norm.gamma)
    _register(reg, "norm.beta", norm.beta)
    _register(reg, "head.weight", head.weight)
    _register(reg, "head.bias", head.bias)

    _apply_mode(m)
    return m


def _is_trainable(name: str, mode: str) -> bool:
    if mode == "full_ft":
        return True
    if mode == "linear_probe":
        return name.startswith("head.")
    if mode == "lka_tuning":
        return "adapter" in name or name.startswith("head.")
    raise ConfigurationError(f"unknown mode {mode!r}")


def _apply_mode(m: Model) -> None:
    for name, t in m.registry.items():
        t.requires_grad = _is_trainable(name, m.config.mode)


def trainable_params(m: Model) -> list[tuple[str, Tensor]]:
    return [(name, t) for name, t in m.registry.items() if t.requires_grad]


def block_forward(x: Tensor, bp: BlockParams, placement: str, lka_cfg: LkaConfig | None) -> Tensor:
    """One transformer block with the configured adapter placement.

    Adapter-free blocks (no adapters on ``bp``) compute the standard
    pre-norm residual form: x + MSA(LN(x)), then + MLP(LN(.)).
    """
    if placement not in PLACEMENTS:
        raise ConfigurationError(f"unknown placement {placement!r}; expected one of {PLACEMENTS}")
    a_msa, a_ffn = bp.adapter_msa, bp.adapter_ffn
    if a_msa is None:
        x_star = msa(layernorm(x, bp.ln1), bp.msa) + x
        return mlp(layernorm(x_star, bp.ln2), bp.mlp) + x_star
    if placement == "parallel_a":
        n1 = layernorm(x, bp.ln1)
        x_star = (msa(n1, bp.msa) + adapter_forward(n1, a_msa, lka_cfg, include_residual=False)) + x
        n2 = layernorm(x_star, bp.ln2)
        return (mlp(n2, bp.mlp) + adapter_forward(n2, a_ffn, lka_cfg, include_residual=False)) + x_star
    if placement == "seq_before_b":
        x_star = adapter_forward(msa(layernorm(x, bp.ln1), bp.msa), a_msa, lka_cfg) + x
        return adapter_forward(mlp(layernorm(x_star, bp.ln2), bp.mlp), a_ffn, lka_cfg) + x_star
    # seq_after_c
    x_star = adapter_forward(msa(layernorm(x, bp.ln1), bp.msa) + x, a_msa, lka_cfg)
    return adapter_forward(mlp(layernorm(x_star, bp.ln2), bp.mlp) + x_star, a_ffn, lka_cfg)


def patchify(m: Model, images: Tensor) -> Tensor:
    """[B,C,S,S] -> [B,T,d] token embeddings (plus cls token if configured)."""
    cfg = m.config
    b, c, s1, s2 = images.shape
    if c != cfg.in_channels or s1 != cfg.image_size or s2 != cfg.image_size:
        raise DimensionError(
            f"expected images [B,{cfg.in_channels},{cfg.image_size},{cfg.image_size}], got {images.shape}")
    p = cfg.patch_size
    ht, wt = cfg.grid
    x = reshape(images, (b, c, ht, p, wt, p))
    x = transpose(x, (0, 2, 4, 1, 3, 5))  # [B,Ht,Wt,C,p,p]
    x = reshape(x, (b, ht * wt, c * p * p))
    tokens = linear(x, m.patch_embed)
    if m.cls_token is not None:
        cls = broadcast_to(m.cls_token, (b, 1, cfg.embed_dim))
        tokens = concat([cls, tokens], axis=1)
    return tokens


def model_features(m: Model, images) -> Tensor:
    """Token features after the final block (before the output norm)."""
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float64))
    tokens = patchify(m, x)
    for bp in m.blocks:
        tokens = block_forward(tokens, bp, m.config.placement, m.config.lka)
    return tokens


def model_forward(m: Model, images) -> Tensor:
    """images [B,C,S,S] -> logits [B,classes] via mean-pooled spatial tokens."""
    tokens = model_features(m, images)
    tokens = layernorm(tokens, m.norm)
    spatial = slice_axis(tokens, 1, m.config.cls_tokens, tokens.shape[1]) \
        if m.config.cls_tokens else tokens
    pooled = reduce_mean(spatial, axis=1)
    return linear(pooled, m.head)
