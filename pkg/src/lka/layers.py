"""Differentiable neural primitives: linear, depthwise conv2d, GeLU,
LayerNorm, multi-head self-attention, and the two-layer MLP.

Layers are pure functions of an input tensor and a parameter dataclass.
Heavier ops (conv, layernorm, softmax, cross-entropy) are fused tape
primitives with hand-derived backward rules; compositions (msa, mlp) are
built from primitives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ConfigurationError, ContractError, DimensionError
from .tensor import Tensor, matmul, record_op, reshape, transpose

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass
class LinearParams:
    weight: Tensor  # [in_dim, out_dim]
    bias: Tensor  # [out_dim]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class DwConvParams:
    weight: Tensor  # [channels, k, k], one filter per channel
    bias: Tensor  # [channels]
    dilation: int = 1

    @property
    def channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel(self) -> int:
        return self.weight.shape[1]


@dataclass
class LayerNormParams:
    gamma: Tensor  # [d]
    beta: Tensor  # [d]
    epsilon: float = 1e-5


@dataclass
class MsaParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    heads: int = 1


@dataclass
class MlpParams:
    fc1: LinearParams
    fc2: LinearParams


# ---------------------------------------------------------------------------
# initialization

def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_linear(rng: np.random.Generator, in_dim: int, out_dim: int,
                zero_weight: bool = False) -> LinearParams:
    w = np.zeros((in_dim, out_dim)) if zero_weight else kaiming_uniform(rng, (in_dim, out_dim), in_dim)
    return LinearParams(weight=Tensor(w), bias=Tensor(np.zeros(out_dim)))


def init_dwconv(rng: np.random.Generator, channels: int, kernel: int, dilation: int = 1) -> DwConvParams:
    if kernel % 2 == 0:
        raise ConfigurationError(f"depthwise kernel must be odd, got {kernel}")
    w = kaiming_uniform(rng, (channels, kernel, kernel), kernel * kernel)
    return DwConvParams(weight=Tensor(w), bias=Tensor(np.zeros(channels)), dilation=dilation)


def init_layernorm(d: int, epsilon: float = 1e-5) -> LayerNormParams:
    return LayerNormParams(gamma=Tensor(np.ones(d)), beta=Tensor(np.zeros(d)), epsilon=epsilon)


def init_msa(rng: np.random.Generator, d: int, heads: int) -> MsaParams:
    if d % heads != 0:
        raise ConfigurationError(f"embed dim {d} not divisible by {heads} heads")
    def proj():
        return Tensor(kaiming_uniform(rng, (d, d), d)), Tensor(np.zeros(d))
    wq, bq = proj()
    wk, bk = proj()
    wv, bv = proj()
    wo, bo = proj()
    return MsaParams(wq, bq, wk, bk, wv, bv, wo, bo, heads=heads)


def init_mlp(rng: np.random.Generator, d: int, ratio: float) -> MlpParams:
    hidden = int(round(d * ratio))
    return MlpParams(fc1=init_linear(rng, d, hidden), fc2=init_linear(rng, hidden, d))


# ---------------------------------------------------------------------------
# ops

def linear(x: Tensor, p: LinearParams) -> Tensor:
    """y = x @ W + b over the last axis, broadcast over leading dims."""
    if x.shape[-1] != p.in_dim:
        raise DimensionError(f"linear expects last extent {p.in_dim}, got input shape {x.shape}")
    return matmul(x, p.weight) + p.bias


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF GeLU: x * Phi(x), with Phi from erf."""
    phi = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = x.data * phi

    def bwd(g):
        if x.requires_grad:
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
            x.accumulate_grad(g * (phi + x.data * pdf))

    return record_op(out, (x,), bwd)


def layernorm(x: Tensor, p: LayerNormParams) -> Tensor:
    """Normalize over the last axis (population variance), then affine."""
    d = p.gamma.shape[0]
    if x.shape[-1] != d:
        raise DimensionError(f"layernorm expects last extent {d}, got input shape {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + p.epsilon)
    xhat = xc * inv_std
    out = p.gamma.data * xhat + p.beta.data

    def bwd(g):
        if p.beta.requires_grad:
            p.beta.accumulate_grad(g.reshape(-1, d).sum(axis=0))
        if p.gamma.requires_grad:
            p.gamma.accumulate_grad((g * xhat).reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * p.gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(inv_std * (dxhat - m1 - xhat * m2))

    return record_op(out, (x, p.gamma, p.beta), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            inner = (g * out).sum(axis=axis, keepdims=True)
            x.accumulate_grad(out * (g - inner))

    return record_op(out, (x,), bwd)


def dwconv2d(x: Tensor, p: DwConvParams) -> Tensor:
    """Per-channel 2-D cross-correlation, zero 'same' padding, stride 1.

    Output spatial size equals input; the effective footprint
    (k-1)*dilation+1 may exceed the input (borders are zero-padded).
    """
    k = p.kernel
    if k % 2 == 0:
        raise ConfigurationError(f"depthwise kernel must be odd, got {k}")
    if p.dilation < 1:
        raise ConfigurationError(f"dilation must be >= 1, got {p.dilation}")
    if x.data.ndim != 4 or x.shape[1] != p.channels:
        raise DimensionError(
            f"dwconv2d expects [B,{p.channels},H,W], got input shape {x.shape}"
        )
    b, c, hgt, wid = x.shape
    dil = p.dilation
    pad = (k - 1) * dil // 2
    w = p.weight.data

    def taps(arr):
        """[B,C,k,k,H,W] view: tap (i,j) of every output position."""
        ap = np.pad(arr, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        win = np.lib.stride_tricks.sliding_window_view(ap, (hgt, wid), axis=(2, 3))
        return win[:, :, :k * dil:dil, :k * dil:dil]

    xwin = taps(x.data)
    out = np.einsum("ckl,bcklhw->bchw", w, xwin) + p.bias.data[None, :, None, None]

    def bwd(g):
        if p.bias.requires_grad:
            p.bias.accumulate_grad(g.sum(axis=(0, 2, 3)), own=True)
        if p.weight.requires_grad:
            p.weight.accumulate_grad(np.einsum("bchw,bcklhw->ckl", g, xwin), own=True)
        if x.requires_grad:
            # input grad = correlation of g with the axis-flipped kernel
            x.accumulate_grad(np.einsum("ckl,bcklhw->bchw", w[:, ::-1, ::-1], taps(g)), own=True)

    return record_op(out, (x, p.weight, p.bias), bwd)


def msa(x: Tensor, p: MsaParams) -> Tensor:
    """Standard softmax self-attention with per-head 1/sqrt(head_dim) scaling."""
    if x.data.ndim != 3:
        raise DimensionError(f"msa expects [B,T,d], got input shape {x.shape}")
    b, t, d = x.shape
    h = p.heads
    if d % h != 0:
        raise ConfigurationError(f"embed dim {d} not divisible by {h} heads")
    hd = d // h

    def heads_of(y: Tensor) -> Tensor:
        return transpose(reshape(y, (b, t, h, hd)), (0, 2, 1, 3))  # [B,h,T,hd]

    q = heads_of(matmul(x, p.wq) + p.bq)
    kt = transpose(reshape(matmul(x, p.wk) + p.bk, (b, t, h, hd)), (0, 2, 3, 1))  # [B,h,hd,T]
    v = heads_of(matmul(x, p.wv) + p.bv)
    probs = softmax(matmul(q, kt) * (1.0 / math.sqrt(hd)), axis=-1)
    ctx = reshape(transpose(matmul(probs, v), (0, 2, 1, 3)), (b, t, d))
    return matmul(ctx, p.wo) + p.bo


def mlp(x: Tensor, p: MlpParams) -> Tensor:
    return linear(gelu(linear(x, p.fc1)), p.fc2)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy from raw logits, log-sum-exp stabilized."""
    if logits.data.ndim != 2:
        raise DimensionError(f"cross_entropy expects [B,classes] logits, got {logits.shape}")
    b = logits.shape[0]
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise ContractError(f"labels shape {labels.shape} does not match batch {b}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    picked = z[np.arange(b), labels]
    out = np.asarray((lse - picked).mean())

    def bwd(g):
        if logits.requires_grad:
            p = np.exp(z - zmax)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(b), labels] -= 1.0
            logits.accumulate_grad(g * p / b)

    return record_op(out, (logits,), bwd)
