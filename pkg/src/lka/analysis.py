"""Effective-receptive-field measurement and parameter-efficiency reports.

The ERF of a model is estimated from input gradients: the central token's
feature channels (after the last block) are summed to a scalar and
backpropagated to the input image; absolute gradients are accumulated
over images and channels into an S x S contribution map, normalized to
max 1. The map is metricized by the smallest centered odd square holding
a given fraction of the total contribution mass.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapters import adapter_param_count
from .backbone import Model, model_features, trainable_params
from .errors import ContractError, DegenerateMapError, FormatError
from .tensor import Tensor, backward, reduce_sum, slice_axis

EXPORT_THRESHOLDS = (0.2, 0.5, 0.99)


@dataclass
class ErfMap:
    size: int
    matrix: np.ndarray  # [S,S], >= 0, max 1 unless degenerate
    num_images: int
    degenerate: bool = False


@dataclass
class ParamReport:
    backbone_trainable: int
    backbone_frozen: int
    adapters_trainable: int
    adapters_frozen: int
    head_trainable: int
    head_frozen: int
    num_adapters: int
    closed_form_per_adapter: int
    match: bool

    @property
    def total_trainable(self) -> int:
        return self.backbone_trainable + self.adapters_trainable + self.head_trainable

    @property
    def total_frozen(self) -> int:
        return self.backbone_frozen + self.adapters_frozen + self.head_frozen


def center_index(n: int) -> int:
    """0-based index of the central element of an extent-n axis."""
    return (n - 1) // 2


def erf_map(m: Model, images: np.ndarray) -> ErfMap:
    """Accumulate |d(central feature sum)/d(input)| over a batch of images."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ContractError(f"expected images [N,C,S,S], got shape {images.shape}")
    n = images.shape[0]
    if n < 1:
        raise ContractError("erf_map needs at least one image")
    ht, wt = m.config.grid
    token = m.config.cls_tokens + center_index(ht) * wt + center_index(wt)

    x = Tensor(images, requires_grad=True)
    feats = model_features(m, x)
    central = slice_axis(feats, 1, token, token + 1)
    backward(reduce_sum(central))
    grad = x.grad if x.grad is not None else np.zeros_like(images)
    acc = np.abs(grad).sum(axis=(0, 1))
    peak = acc.max()
    if peak == 0.0:
        return ErfMap(size=images.shape[-1], matrix=acc, num_images=n, degenerate=True)
    return ErfMap(size=images.shape[-1], matrix=acc / peak, num_images=n)


def erf_area_ratio(e: ErfMap, t: float) -> float:
    """Area fraction (a/S)^2 of the smallest centered odd-side square whose
    (border-clipped) footprint holds at least fraction t of the map's mass."""
    if e.degenerate:
        raise DegenerateMapError("area ratio undefined for an all-zero contribution map")
    if not 0.0 < t < 1.0:
        raise ContractError(f"threshold must lie in (0,1), got {t}")
    s = e.size
    total = e.matrix.sum()
    cy = cx = center_index(s)
    a_max = 2 * max(cy, s - 1 - cy, cx, s - 1 - cx) + 1
    for a in range(1, a_max + 2, 2):
        r = (a - 1) // 2
        mass = e.matrix[max(0, cy - r):cy + r + 1, max(0, cx - r):cx + r + 1].sum()
        if mass >= t * total:
            return min(1.0, (a / s) ** 2)
    return 1.0


def param_report(m: Model) -> ParamReport:
    """Per-group parameter counts with the closed-form adapter cross-check."""
    groups = {"backbone": [0, 0], "adapters": [0, 0], "head": [0, 0]}
    for name, t in m.registry.items():
        if "adapter" in name:
            g = "adapters"
        elif name.startswith("head."):
            g = "head"
        else:
            g = "backbone"
        groups[g][0 if t.requires_grad else 1] += t.size

    num_adapters = sum(
        (bp.adapter_msa is not None) + (bp.adapter_ffn is not None) for bp in m.blocks)
    per_adapter = adapter_param_count(m.config.lka) if m.config.lka is not None else 0
    enumerated = groups["adapters"][0] + groups["adapters"][1]
    return ParamReport(
        backbone_trainable=groups["backbone"][0], backbone_frozen=groups["backbone"][1],
        adapters_trainable=groups["adapters"][0], adapters_frozen=groups["adapters"][1],
        head_trainable=groups["head"][0], head_frozen=groups["head"][1],
        num_adapters=num_adapters, closed_form_per_adapter=per_adapter,
        match=(enumerated == num_adapters * per_adapter),
    )


def format_param_report(r: ParamReport) -> str:
    rows = [
        ("group", "trainable", "frozen"),
        ("backbone", str(r.backbone_trainable), str(r.backbone_frozen)),
        ("adapters", str(r.adapters_trainable), str(r.adapters_frozen)),
        ("head", str(r.head_trainable), str(r.head_frozen)),
        ("total", str(r.total_trainable), str(r.total_frozen)),
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.append(
        f"per-adapter closed form: {r.closed_form_per_adapter}  adapters: {r.num_adapters}  "
        f"enumerated: {r.adapters_trainable + r.adapters_frozen}  match: {str(r.match).lower()}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# export

_PGM_MAXVAL = 65535


def export_erf(e: ErfMap, pgm_path) -> tuple[Path, Path]:
    """Write the map as a 16-bit binary PGM plus a threshold/area-ratio CSV.

    The CSV lands next to the PGM with a .csv suffix. Sample values are
    big-endian per the PGM convention for maxval > 255.
    """
    pgm_path = Path(pgm_path)
    csv_path = pgm_path.with_suffix(".csv")
    quant = np.round(e.matrix * _PGM_MAXVAL).astype(">u2")
    try:
        with open(pgm_path, "wb") as f:
            f.write(f"P5\n{e.size} {e.size}\n{_PGM_MAXVAL}\n".encode("ascii"))
            f.write(quant.tobytes())
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["threshold", "area_ratio"])
            for t in EXPORT_THRESHOLDS:
                writer.writerow([repr(t), repr(erf_area_ratio(e, t))])
    except OSError as exc:
        raise OSError(f"failed writing ERF export to {pgm_path}: {exc}") from exc
    return pgm_path, csv_path


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM written by export_erf back into a uint16 array."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary P5 PGM")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    dtype = ">u2" if maxval > 255 else np.uint8
    data = np.frombuffer(parts[3], dtype=dtype, count=w * h)
    return data.reshape(h, w).astype(np.uint16)
