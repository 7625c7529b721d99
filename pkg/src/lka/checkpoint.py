"""LKCK checkpoint I/O.

Layout (little-endian): magic "LKCK", version u32=1, step u64, then two
tables: the parameter table and the optimizer-state table. Each table is
an entry count u32 followed by entries of [name-len u16, name bytes,
rank u8, extents u32 x rank, payload f32 x prod(extents)]. Values are
stored at 32-bit precision.

The optimizer table holds first-/second-moment entries ("<name>.m",
"<name>.v") for each trainable parameter, followed by scalar
"config/<key>" entries echoing the model (and optionally training)
configuration, numerically coded so a checkpoint alone suffices to
rebuild its model.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .adapters import LkaConfig
from .backbone import Model, ModelConfig, build_model, trainable_params
from .errors import CompatibilityError, FormatError, LengthError
from .optim import AdamState, TrainConfig

MAGIC = b"LKCK"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")

_PLACEMENT_CODES = {"parallel_a": 0, "seq_before_b": 1, "seq_after_c": 2}
_RECIPE_CODES = {"cw_single": 0, "dilated": 1, "cw_stacked": 2}
_MODE_CODES = {"lka_tuning": 0, "linear_probe": 1, "full_ft": 2}
_PLACEMENTS = {v: k for k, v in _PLACEMENT_CODES.items()}
_RECIPES = {v: k for k, v in _RECIPE_CODES.items()}
_MODES = {v: k for k, v in _MODE_CODES.items()}

_CONFIG_PREFIX = "config/"

_MODEL_KEYS = ("image_size", "patch_size", "in_channels", "embed_dim", "depth",
               "heads", "mlp_ratio", "classes", "cls_tokens", "placement",
               "mode", "has_adapter", "bottleneck", "kernel", "recipe")
_TRAIN_KEYS = ("epochs", "batch_size", "lr_max", "lr_min", "warmup_epochs",
               "weight_decay", "beta1", "beta2", "eps", "seed")


def _config_echo(cfg: ModelConfig, train_cfg: TrainConfig | None) -> dict[str, float]:
    echo = {
        "image_size": cfg.image_size, "patch_size": cfg.patch_size,
        "in_channels": cfg.in_channels, "embed_dim": cfg.embed_dim,
        "depth": cfg.depth, "heads": cfg.heads, "mlp_ratio": cfg.mlp_ratio,
        "classes": cfg.classes, "cls_tokens": cfg.cls_tokens,
        "placement": _PLACEMENT_CODES[cfg.placement], "mode": _MODE_CODES[cfg.mode],
        "has_adapter": int(cfg.lka is not None),
        "bottleneck": cfg.lka.d_hat if cfg.lka else 0,
        "kernel": (cfg.lka.kernel or 0) if cfg.lka else 0,
        "recipe": _RECIPE_CODES[cfg.lka.recipe] if cfg.lka else 0,
    }
    if train_cfg is not None:
        for key in _TRAIN_KEYS:
            value = getattr(train_cfg, key)
            echo[key] = -1.0 if value is None else value  # None warmup => -1
    return {k: float(v) for k, v in echo.items()}


def decode_model_config(echo: dict[str, float]) -> ModelConfig:
    def geti(key):
        return int(round(echo[key]))

    lka = None
    if geti("has_adapter"):
        g = geti("image_size") // geti("patch_size")
        kernel = geti("kernel")
        lka = LkaConfig(d=geti("embed_dim"), d_hat=geti("bottleneck"),
                        kernel=kernel if kernel else None, grid=(g, g),
                        recipe=_RECIPES[geti("recipe")], cls_tokens=geti("cls_tokens"))
    return ModelConfig(
        image_size=geti("image_size"), patch_size=geti("patch_size"),
        embed_dim=geti("embed_dim"), depth=geti("depth"), heads=geti("heads"),
        classes=geti("classes"), mlp_ratio=float(echo["mlp_ratio"]),
        in_channels=geti("in_channels"), cls_tokens=geti("cls_tokens"),
        placement=_PLACEMENTS[geti("placement")], mode=_MODES[geti("mode")], lka=lka)


def decode_train_config(echo: dict[str, float]) -> TrainConfig | None:
    """Recover the training configuration echoed into a checkpoint, or None
    if the checkpoint was saved without one."""
    if not all(key in echo for key in _TRAIN_KEYS):
        return None
    ints = {"epochs", "batch_size", "seed"}
    kwargs = {key: (int(round(echo[key])) if key in ints else float(echo[key]))
              for key in _TRAIN_KEYS}
    if kwargs["warmup_epochs"] < 0:
        kwargs["warmup_epochs"] = None
    return TrainConfig(**kwargs)


def _write_entry(out: bytearray, name: str, values: np.ndarray) -> None:
    nb = name.encode("utf-8")
    out += struct.pack("<H", len(nb))
    out += nb
    out += struct.pack("<B", values.ndim)
    for ext in values.shape:
        out += struct.pack("<I", ext)
    out += np.ascontiguousarray(values, dtype="<f4").tobytes()


def _read_entry(raw: bytes, off: int, path) -> tuple[str, np.ndarray, int]:
    try:
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        end = off + 4 * count
        if end > len(raw):
            raise LengthError(f"{path}: entry {name!r} payload runs past end of file")
        values = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
        return name, values, end
    except struct.error as exc:
        raise LengthError(f"{path}: truncated checkpoint entry") from exc


def save_checkpoint(model: Model, state: AdamState, path,
                    train_cfg: TrainConfig | None = None) -> Path:
    path = Path(path)
    out = bytearray()
    out += _HEADER.pack(MAGIC, VERSION, state.step)

    out += struct.pack("<I", len(model.registry))
    for name, t in model.registry.items():
        _write_entry(out, name, t.data)

    moments = []
    for name, _ in trainable_params(model):
        if name in state.m:
            moments.append((f"{name}.m", state.m[name]))
            moments.append((f"{name}.v", state.v[name]))
    echo = _config_echo(model.config, train_cfg)
    out += struct.pack("<I", len(moments) + len(echo))
    for name, values in moments:
        _write_entry(out, name, values)
    for key, value in echo.items():
        _write_entry(out, _CONFIG_PREFIX + key, np.asarray(value, dtype=np.float64))

    path.write_bytes(bytes(out))
    return path


def _read_table(raw: bytes, off: int, path) -> tuple[dict[str, np.ndarray], int]:
    if off + 4 > len(raw):
        raise LengthError(f"{path}: truncated table header")
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        name, values, off = _read_entry(raw, off, path)
        entries[name] = values
    return entries, off


def load_checkpoint(path, model: Model | None = None) -> tuple[Model, AdamState, dict[str, float]]:
    """Load an LKCK file. With ``model`` given, parameters load into it and
    any name/shape disagreement raises CompatibilityError listing the
    offenders; otherwise the model is rebuilt from the config echo."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise LengthError(f"{path}: file shorter than the LKCK header")
    magic, version, step = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported LKCK version {version}")
    params, off = _read_table(raw, _HEADER.size, path)
    opt_entries, _ = _read_table(raw, off, path)

    echo = {name[len(_CONFIG_PREFIX):]: float(values)
            for name, values in opt_entries.items() if name.startswith(_CONFIG_PREFIX)}

    if model is None:
        model = build_model(decode_model_config(echo), seed=0)

    offenders = []
    for name, t in model.registry.items():
        if name not in params:
            offenders.append(f"missing {name}")
        elif params[name].shape != t.data.shape:
            offenders.append(f"{name}: file has {params[name].shape}, model has {t.data.shape}")
    offenders += [f"unexpected {name}" for name in params if name not in model.registry]
    if offenders:
        raise CompatibilityError(f"{path}: incompatible checkpoint: " + "; ".join(offenders))
    for name, t in model.registry.items():
        t.data = params[name].astype(np.float64)

    state = AdamState(step=step)
    for name, values in opt_entries.items():
        if name.startswith(_CONFIG_PREFIX):
            continue
        base, kind = name.rsplit(".", 1)
        target = state.m if kind == "m" else state.v
        target[base] = values.astype(np.float64)
    return model, state, echo


def quantize_to_storage(model: Model, state: AdamState | None = None) -> None:
    """Round parameters (and optimizer moments) through the stored 32-bit
    precision in place, reproducing the effect of a save/load cycle."""
    for t in model.registry.values():
        t.data = t.data.astype(np.float32).astype(np.float64)
    if state is not None:
        for table in (state.m, state.v):
            for key in table:
                table[key] = table[key].astype(np.float32).astype(np.float64)
