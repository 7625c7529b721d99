"""Command-line surface: train, eval, erf, params, sweep, gen-data.

Configuration comes from an optional ``key = value`` file (``#`` starts a
comment line) plus per-key flag overrides; flags win. Unknown keys are
rejected. Every run writes an ``effective-config.txt`` echo of the fully
resolved configuration into its output directory, and rerunning from
that echo reproduces the outputs byte-for-byte.

Exit codes: 0 success, 2 usage/config error, 1 runtime failure. The
default output directory may be set via the LKA_OUT_DIR environment
variable.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from dataclasses import replace
from multiprocessing import get_context
from pathlib import Path

from .analysis import erf_map, export_erf, format_param_report, param_report
from .backbone import ModelConfig, build_model
from .checkpoint import decode_model_config, decode_train_config, load_checkpoint, save_checkpoint
from .data import Dataset, gen_longrange, load_dataset, save_dataset, split_80_20
from .errors import ConfigurationError
from .optim import TrainConfig
from .train import evaluate, train

OUT_DIR_ENV = "LKA_OUT_DIR"

_NONE = object()

# key -> (caster name, default); order defines the echo layout
SCHEMA: dict[str, tuple[str, object]] = {
    "image_size": ("int", 64),
    "patch_size": ("int", 8),
    "in_channels": ("int", 1),
    "embed_dim": ("int", 64),
    "depth": ("int", 4),
    "heads": ("int", 4),
    "mlp_ratio": ("float", 4.0),
    "classes": ("int", 4),
    "cls_tokens": ("int", 0),
    "placement": ("str", "parallel_a"),
    "mode": ("str", "lka_tuning"),
    "bottleneck": ("opt_int", 8),
    "kernel": ("opt_int", 7),
    "recipe": ("str", "cw_single"),
    "epochs": ("int", 100),
    "batch_size": ("int", 64),
    "lr_max": ("float", 1e-3),
    "lr_min": ("float", 1e-5),
    "warmup_epochs": ("opt_float", None),
    "weight_decay": ("float", 0.05),
    "beta1": ("float", 0.9),
    "beta2": ("float", 0.999),
    "eps": ("float", 1e-8),
    "seed": ("int", 0),
    "synthetic_n": ("int", 2000),
    "data_seed": ("int", 0),
}


def _cast(key: str, text: str):
    kind = SCHEMA[key][0]
    text = text.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "opt_int":
            return None if text.lower() == "none" else int(text)
        if kind == "opt_float":
            return None if text.lower() == "none" else float(text)
        return text
    except ValueError as exc:
        raise ConfigurationError(f"config key {key!r}: cannot parse {text!r} as {kind}") from exc


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_file(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, text = stripped.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigurationError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _cast(key, text)
    return values


def resolve_config(args) -> dict:
    """Defaults <- config file <- flag overrides."""
    cfg = {key: default for key, (_, default) in SCHEMA.items()}
    if getattr(args, "config", None):
        cfg.update(parse_config_file(args.config))
    for key in SCHEMA:
        raw = getattr(args, f"set_{key}", None)
        if raw is not None:
            cfg[key] = _cast(key, raw)
    return cfg


def write_echo(cfg: dict, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "effective-config.txt"
    lines = [f"{key} = {_render(cfg[key])}" for key in SCHEMA]
    path.write_text("\n".join(lines) + "\n")
    return path


def model_config_from(cfg: dict) -> ModelConfig:
    from .backbone import make_config

    return make_config(
        cfg["image_size"], cfg["patch_size"], cfg["embed_dim"], cfg["depth"],
        cfg["heads"], cfg["classes"], mlp_ratio=cfg["mlp_ratio"],
        in_channels=cfg["in_channels"], cls_tokens=cfg["cls_tokens"],
        placement=cfg["placement"], mode=cfg["mode"],
        bottleneck=cfg["bottleneck"], kernel=cfg["kernel"], recipe=cfg["recipe"])


def train_config_from(cfg: dict) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr_max=cfg["lr_max"],
        lr_min=cfg["lr_min"], warmup_epochs=cfg["warmup_epochs"],
        weight_decay=cfg["weight_decay"], beta1=cfg["beta1"], beta2=cfg["beta2"],
        eps=cfg["eps"], seed=cfg["seed"])


def _dataset_from(cfg: dict, data_path: str | None) -> Dataset:
    if data_path:
        return load_dataset(data_path)
    return gen_longrange(cfg["data_seed"], cfg["synthetic_n"], cfg["image_size"],
                         classes=cfg["classes"])


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_render(v) for v in row])


def _out_dir(args) -> Path:
    out = getattr(args, "out", None) or os.environ.get(OUT_DIR_ENV) or "."
    return Path(out)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    write_echo(cfg, out)
    ds = _dataset_from(cfg, args.data)
    train_ds, test_ds = split_80_20(ds, cfg["data_seed"])
    model = build_model(model_config_from(cfg), seed=cfg["seed"])
    tcfg = train_config_from(cfg)
    result = train(model, train_ds, tcfg)
    save_checkpoint(model, result.state, out / "checkpoint.lkck", train_cfg=tcfg)
    _write_csv(out / "metrics.csv", ["epoch", "loss", "train_top1"],
               [[m.epoch, m.loss, m.top1] for m in result.history])
    top1 = evaluate(model, test_ds)
    print(f"trained {result.steps} steps; test top-1 {top1}")
    print(f"wrote {out / 'checkpoint.lkck'} and {out / 'metrics.csv'}")
    return 0


def cmd_eval(args) -> int:
    model, _, echo = load_checkpoint(args.ckpt)
    ds = load_dataset(args.data)
    out = _out_dir(args)
    cfg = {key: default for key, (_, default) in SCHEMA.items()}
    cfg.update(_echo_to_schema(echo))
    write_echo(cfg, out)
    top1 = evaluate(model, ds)
    _write_csv(out / "eval.csv", ["ckpt", "data", "top1"], [[args.ckpt, args.data, top1]])
    print(f"top-1 {top1}")
    return 0


def _echo_to_schema(echo: dict[str, float]) -> dict:
    mcfg = decode_model_config(echo)
    out = {
        "image_size": mcfg.image_size, "patch_size": mcfg.patch_size,
        "in_channels": mcfg.in_channels, "embed_dim": mcfg.embed_dim,
        "depth": mcfg.depth, "heads": mcfg.heads, "mlp_ratio": mcfg.mlp_ratio,
        "classes": mcfg.classes, "cls_tokens": mcfg.cls_tokens,
        "placement": mcfg.placement, "mode": mcfg.mode,
        "bottleneck": mcfg.lka.d_hat if mcfg.lka else None,
        "kernel": mcfg.lka.kernel if mcfg.lka else None,
        "recipe": mcfg.lka.recipe if mcfg.lka else "cw_single",
    }
    tcfg = decode_train_config(echo)
    if tcfg is not None:
        for key in ("epochs", "batch_size", "lr_max", "lr_min", "warmup_epochs",
                    "weight_decay", "beta1", "beta2", "eps", "seed"):
            out[key] = getattr(tcfg, key)
    return out


def cmd_erf(args) -> int:
    model, _, echo = load_checkpoint(args.ckpt)
    mcfg = decode_model_config(echo)
    if args.size != mcfg.image_size:
        mcfg = replace(mcfg, image_size=args.size)
        if mcfg.lka is not None:
            g = args.size // mcfg.patch_size
            mcfg = replace(mcfg, lka=replace(mcfg.lka, grid=(g, g)))
        model = build_model(mcfg, seed=0)
        model, _, _ = load_checkpoint(args.ckpt, model=model)
    out = _out_dir(args)
    cfg = {key: default for key, (_, default) in SCHEMA.items()}
    cfg.update(_echo_to_schema(echo))
    cfg["image_size"] = args.size
    write_echo(cfg, out)
    images = gen_longrange(args.seed, args.images, args.size).images
    emap = erf_map(model, images)
    pgm, csv_path = export_erf(emap, out / "erf.pgm")
    print(f"wrote {pgm} and {csv_path}" + (" (degenerate map)" if emap.degenerate else ""))
    return 0


def cmd_params(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    write_echo(cfg, out)
    model = build_model(model_config_from(cfg), seed=cfg["seed"])
    print(format_param_report(param_report(model)))
    return 0


def _sweep_cell(payload) -> dict:
    cfg, kernel, width, seed, data_path = payload
    cell = dict(cfg)
    cell["kernel"] = kernel
    cell["bottleneck"] = width
    cell["seed"] = seed
    ds = _dataset_from(cell, data_path)
    train_ds, test_ds = split_80_20(ds, cell["data_seed"])
    model = build_model(model_config_from(cell), seed=seed)
    tcfg = train_config_from(cell)
    started = time.perf_counter()
    train(model, train_ds, tcfg)
    runtime = time.perf_counter() - started
    top1 = evaluate(model, test_ds)
    report = param_report(model)
    return {
        "kernel": "none" if kernel is None else kernel,
        "width": width, "seed": seed, "top1": top1,
        "trainable_params": report.total_trainable,
        "adapter_params": report.adapters_trainable + report.adapters_frozen,
        "runtime_s": runtime,
    }


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    write_echo(cfg, out)
    kernels = [None if k.strip().lower() == "none" else int(k) for k in args.kernel.split(",")]
    widths = [int(w) for w in args.width.split(",")] if args.width else [cfg["bottleneck"]]
    cells = [(dict(cfg), k, w, s, args.data)
             for k in kernels for w in widths for s in range(args.seeds)]
    if args.jobs > 1:
        with get_context("fork").Pool(args.jobs) as pool:
            rows = pool.map(_sweep_cell, cells)
    else:
        rows = [_sweep_cell(c) for c in cells]
    order = {("none" if k is None else k, w): i
             for i, (k, w) in enumerate((k, w) for k in kernels for w in widths)}
    rows.sort(key=lambda r: (order[(r["kernel"], r["width"])], r["seed"]))
    header = ["kernel", "width", "seed", "top1", "trainable_params", "adapter_params", "runtime_s"]
    _write_csv(out / "sweep.csv", header, [[r[h] for h in header] for r in rows])
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")
    return 0


def cmd_gen_data(args) -> int:
    ds = gen_longrange(args.seed, args.n, args.size)
    path = save_dataset(ds, args.out)
    cfg = {key: default for key, (_, default) in SCHEMA.items()}
    cfg.update({"data_seed": args.seed, "synthetic_n": args.n, "image_size": args.size})
    write_echo(cfg, Path(path).resolve().parent)
    print(f"wrote {path} ({args.n} samples, {ds.classes} classes)")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    group = p.add_argument_group("config overrides (win over --config)")
    for key, (kind, default) in SCHEMA.items():
        group.add_argument(f"--{key.replace('_', '-')}", dest=f"set_{key}", metavar=kind.upper(),
                           help=f"override {key} (default {_render(default)})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lka",
        description="Large-kernel adapter fine-tuning micro-toolkit.",
        epilog=f"The default --out directory is ${OUT_DIR_ENV} when set, else '.'.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model; writes checkpoint + metrics.csv")
    _add_config_flags(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="LKDS dataset file (80/20 split applied)")
    src.add_argument("--synthetic", action="store_true",
                     help="use the generated long-range task (default)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint; prints top-1")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="output directory for eval.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("erf", help="effective-receptive-field map of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--images", type=int, required=True)
    p.add_argument("--seed", type=int, default=0, help="probe-image generator seed")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_erf)

    p = sub.add_parser("params", help="parameter report: closed form vs enumeration")
    _add_config_flags(p)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("sweep", help="kernel/width/seed sweep; one CSV row per run")
    _add_config_flags(p)
    p.add_argument("--kernel", required=True, help="comma list, e.g. 1,3,5,7 or none,7")
    p.add_argument("--width", help="comma list of bottleneck widths")
    p.add_argument("--seeds", type=int, default=1, help="number of seeds (0..K-1)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="LKDS dataset file")
    src.add_argument("--synthetic", action="store_true")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-data", help="generate a synthetic LKDS dataset file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--out", required=True, help="output LKDS file")
    p.set_defaults(func=cmd_gen_data)
    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
