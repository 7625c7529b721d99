"""Independent scalar-loop references for the vectorized layers.

Everything here is written with explicit Python loops and math-module
scalar functions so the reference path shares no code with the package
implementations it checks.
"""

import math

import numpy as np


def gelu_ref(v: float) -> float:
    return v * 0.5 * (1.0 + math.erf(v / math.sqrt(2.0)))


def linear_ref(x, w, b):
    """x [N,in], w [in,out], b [out] -> [N,out] by triple loop."""
    n, d_in = x.shape
    d_out = w.shape[1]
    out = np.zeros((n, d_out))
    for i in range(n):
        for j in range(d_out):
            acc = b[j]
            for k in range(d_in):
                acc += x[i, k] * w[k, j]
            out[i, j] = acc
    return out


def dwconv2d_ref(x, w, b, dilation=1):
    """x [B,C,H,W], w [C,k,k], b [C]; zero 'same' padding, stride 1."""
    bs, c, h, wd = x.shape
    k = w.shape[1]
    pad = (k - 1) * dilation // 2
    out = np.zeros_like(x)
    for n in range(bs):
        for ch in range(c):
            for y in range(h):
                for xx in range(wd):
                    acc = b[ch]
                    for i in range(k):
                        for j in range(k):
                            yy = y + i * dilation - pad
                            xj = xx + j * dilation - pad
                            if 0 <= yy < h and 0 <= xj < wd:
                                acc += w[ch, i, j] * x[n, ch, yy, xj]
                    out[n, ch, y, xx] = acc
    return out


def layernorm_ref(x, gamma, beta, eps):
    """x [N,d]: per-row normalization with population variance."""
    n, d = x.shape
    out = np.zeros_like(x)
    for i in range(n):
        mu = sum(x[i, j] for j in range(d)) / d
        var = sum((x[i, j] - mu) ** 2 for j in range(d)) / d
        denom = math.sqrt(var + eps)
        for j in range(d):
            out[i, j] = gamma[j] * (x[i, j] - mu) / denom + beta[j]
    return out


def softmax_row_ref(row):
    m = max(row)
    exps = [math.exp(v - m) for v in row]
    s = sum(exps)
    return [e / s for e in exps]


def msa_ref(x, p):
    """x [B,T,d] with an MsaParams-like object; explicit per-head loops."""
    b, t, d = x.shape
    heads = p.heads
    hd = d // heads
    wq, bq = p.wq.data, p.bq.data
    wk, bk = p.wk.data, p.bk.data
    wv, bv = p.wv.data, p.bv.data
    wo, bo = p.wo.data, p.bo.data
    out = np.zeros_like(x)
    for n in range(b):
        q = linear_ref(x[n], wq, bq)
        k = linear_ref(x[n], wk, bk)
        v = linear_ref(x[n], wv, bv)
        ctx = np.zeros((t, d))
        for h in range(heads):
            lo, hi = h * hd, (h + 1) * hd
            for i in range(t):
                scores = []
                for j in range(t):
                    s = sum(q[i, a] * k[j, a] for a in range(lo, hi))
                    scores.append(s / math.sqrt(hd))
                probs = softmax_row_ref(scores)
                for a in range(lo, hi):
                    ctx[i, a] = sum(probs[j] * v[j, a] for j in range(t))
        out[n] = linear_ref(ctx, wo, bo)
    return out


def adapter_ref(x, params, cfg, include_residual=True):
    """Adapter forward chained from the scalar references above."""
    b, t, d = x.shape
    ht, wt = cfg.grid
    out = np.zeros_like(x)
    for n in range(b):
        h = linear_ref(x[n], params.down.weight.data, params.down.bias.data)
        if params.convs:
            cls = h[:cfg.cls_tokens]
            spatial = h[cfg.cls_tokens:]
            grid = np.zeros((1, cfg.d_hat, ht, wt))
            for tok in range(ht * wt):
                grid[0, :, tok // wt, tok % wt] = spatial[tok]
            for conv in params.convs:
                grid = dwconv2d_ref(grid, conv.weight.data, conv.bias.data, conv.dilation)
            conv_tokens = np.zeros_like(spatial)
            for tok in range(ht * wt):
                conv_tokens[tok] = grid[0, :, tok // wt, tok % wt]
            h = np.concatenate([cls, conv_tokens], axis=0)
        act = np.vectorize(gelu_ref)(h)
        up = linear_ref(act, params.up.weight.data, params.up.bias.data)
        out[n] = up + x[n] if include_residual else up
    return out
