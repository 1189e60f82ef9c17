"""Command-line front end.

Subcommands: gen-data, train, calibrate, quantize, eval, report.  Options
resolve as CLI flag > config-file key > built-in default; config files
are UTF-8 ``key = value`` lines with ``#`` comments.  Every pipeline is
fully seeded, so identical configurations produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .bench import gen_dataset, load_pairs, read_manifest
from .frequency import CalibConfig, FreqConfig, calibrate, write_loss_trace
from .network import (build_model, evaluate_model, load_checkpoint,
                      model_from_entries, model_to_entries, quantize_model,
                      save_checkpoint, train_fp32, QUANT_METHODS)
from .outliers import SamplerConfig
from .reporting import format_report, report_compression, write_report_csv

DESK_COUNTS = {"train": 500, "calib": 50, "test": 50}
DESK_SIZE = 64

CLI_BITS = (3, 4, 6, 8)

DEFAULTS = {
    "seed": 0,
    "bits_w": 8,
    "bits_a": 8,
    "beta": 0.005,
    "gamma1": 1e-3,
    "gamma2": 1e-3,
    "alpha": 0.5,
    "freq_level": 3,
    "lr": 1e-3,
    "lambda_p": 1.0,
    "crop": 64,
    "method": "quantdemoire",
}

# epochs differ by stage: backbone training vs. bound calibration
EPOCH_DEFAULTS = {"train": 30, "quantize": 4, "calibrate": 4}

_KEY_TYPES = {
    "seed": int, "bits_w": int, "bits_a": int, "beta": float,
    "gamma1": float, "gamma2": float, "alpha": float, "freq_level": int,
    "epochs": int, "lr": float, "lambda_p": float, "crop": int,
    "method": str, "out": str, "ckpt": str, "data": str,
}


class UsageError(Exception):
    pass


def parse_config_file(path) -> dict:
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _KEY_TYPES:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _KEY_TYPES[key](raw)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {raw!r}") from exc
    return values


def _resolve(args, command: str) -> dict:
    file_values = parse_config_file(args.config) if args.config else {}
    cfg = dict(DEFAULTS)
    cfg["epochs"] = EPOCH_DEFAULTS.get(command, 4)
    cfg.update(file_values)
    for key in _KEY_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    for key in ("bits_w", "bits_a"):
        if cfg[key] not in CLI_BITS:
            raise UsageError(f"{key} must be one of {CLI_BITS}, got {cfg[key]}")
    if cfg["method"] not in QUANT_METHODS:
        raise UsageError(f"method must be one of {QUANT_METHODS}, got {cfg['method']!r}")
    if not 0.0 <= cfg["beta"] < 0.5:
        raise UsageError(f"beta must be in [0, 0.5), got {cfg['beta']}")
    for key in ("gamma1", "gamma2"):
        if not 0.0 < cfg[key] <= 1.0:
            raise UsageError(f"{key} must be in (0, 1], got {cfg[key]}")
    if cfg.get("epochs", 0) < 0:
        raise UsageError(f"epochs must be >= 0, got {cfg['epochs']}")
    if cfg["lr"] <= 0:
        raise UsageError(f"lr must be positive, got {cfg['lr']}")
    if cfg["freq_level"] < 0:
        raise UsageError(f"freq-level must be >= 0, got {cfg['freq_level']}")
    if cfg["crop"] < 1:
        raise UsageError(f"crop must be >= 1, got {cfg['crop']}")


def _require(cfg: dict, *keys: str) -> None:
    for key in keys:
        if not cfg.get(key):
            raise UsageError(f"missing required option --{key.replace('_', '-')}")


def _load_split(cfg: dict, split: str):
    manifest_path = cfg["data"]
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, "manifest.txt")
    manifest = read_manifest(manifest_path)
    pairs = load_pairs(manifest, split)
    if not pairs:
        raise RuntimeError(f"no '{split}' images in {manifest_path}")
    return pairs


def _write_summary(path, lines) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def _write_train_trace(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,lr,loss\n")
        for step, lr, loss in rows:
            fh.write(f"{step},{lr:.10g},{loss:.10g}\n")


def _eval_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index,psnr,ssim,psnr_in,ssim_in\n")
        for i, r in enumerate(rows):
            fh.write(f"{i},{r['psnr']:.6f},{r['ssim']:.6f},"
                     f"{r['psnr_in']:.6f},{r['ssim_in']:.6f}\n")


def cmd_gen_data(cfg: dict) -> None:
    _require(cfg, "out")
    manifest = gen_dataset(cfg["seed"], DESK_COUNTS, DESK_SIZE, DESK_SIZE, cfg["out"])
    print(f"wrote {len(manifest.entries)} pairs under {cfg['out']}")


def cmd_train(cfg: dict) -> None:
    _require(cfg, "data", "out")
    pairs = _load_split(cfg, "train")
    os.makedirs(cfg["out"], exist_ok=True)
    model = build_model(cfg["seed"])
    trace = train_fp32(model, pairs, cfg["epochs"], cfg["lr"], cfg["seed"])
    ckpt_path = os.path.join(cfg["out"], "fp32.qdck")
    save_checkpoint(ckpt_path, model_to_entries(model))
    _write_train_trace(trace, os.path.join(cfg["out"], "train_trace.csv"))
    last = trace[-1][2] if trace else float("nan")
    print(f"trained {cfg['epochs']} epochs, final loss {last:.6g}, saved {ckpt_path}")


def _calib_configs(cfg: dict):
    sampler = SamplerConfig(gamma1=cfg["gamma1"], gamma2=cfg["gamma2"],
                            seed=cfg["seed"])
    cc = CalibConfig(epochs=cfg["epochs"], lr0=cfg["lr"], crop=cfg["crop"],
                     lambda_p=cfg["lambda_p"], seed=cfg["seed"])
    fc = FreqConfig(level=cfg["freq_level"])
    return sampler, cc, fc


def cmd_quantize(cfg: dict) -> None:
    _require(cfg, "ckpt", "data", "out")
    entries = load_checkpoint(cfg["ckpt"])
    model, meta = model_from_entries(entries)
    if meta["format"] != "fp32":
        raise RuntimeError("quantize expects a full-precision checkpoint")
    pairs = _load_split(cfg, "calib")
    sampler, cc, fc = _calib_configs(cfg)
    qmodel, trace = quantize_model(model, pairs, cfg["bits_w"], cfg["bits_a"],
                                   method=cfg["method"], sampler=sampler,
                                   alpha=cfg["alpha"], beta=cfg["beta"],
                                   calib_cfg=cc, freq_cfg=fc)
    os.makedirs(cfg["out"], exist_ok=True)
    ckpt_path = os.path.join(cfg["out"], "quantized.qdck")
    save_checkpoint(ckpt_path, model_to_entries(
        qmodel, method=cfg["method"], bits_w=cfg["bits_w"], beta=cfg["beta"]))
    if trace:
        write_loss_trace(trace, os.path.join(cfg["out"], "calib_trace.csv"))
    report = report_compression(qmodel, cfg["bits_w"], cfg["bits_a"], cfg["beta"])
    write_report_csv(report, os.path.join(cfg["out"], "compression.csv"))
    _write_summary(os.path.join(cfg["out"], "summary.txt"),
                   [f"method: {cfg['method']}"] + format_report(report).splitlines())
    print(f"quantized W{cfg['bits_w']}A{cfg['bits_a']} ({cfg['method']}), saved {ckpt_path}")


def cmd_calibrate(cfg: dict) -> None:
    _require(cfg, "ckpt", "data", "out")
    entries = load_checkpoint(cfg["ckpt"])
    model, meta = model_from_entries(entries)
    if meta["format"] != "quantized":
        raise RuntimeError("calibrate expects a quantized checkpoint")
    pairs = _load_split(cfg, "calib")
    _, cc, fc = _calib_configs(cfg)
    trace = calibrate(model, pairs, cc, fc)
    os.makedirs(cfg["out"], exist_ok=True)
    ckpt_path = os.path.join(cfg["out"], "calibrated.qdck")
    save_checkpoint(ckpt_path, model_to_entries(
        model, method=meta["method"], bits_w=meta["bits_w"], beta=meta["beta"]))
    write_loss_trace(trace, os.path.join(cfg["out"], "calib_trace.csv"))
    print(f"calibrated {cfg['epochs']} epochs over {len(pairs)} pairs, saved {ckpt_path}")


def cmd_eval(cfg: dict) -> None:
    _require(cfg, "ckpt", "data", "out")
    model, meta = model_from_entries(load_checkpoint(cfg["ckpt"]))
    pairs = _load_split(cfg, "test")
    rows, summary = evaluate_model(model, pairs)
    os.makedirs(cfg["out"], exist_ok=True)
    _eval_csv(rows, os.path.join(cfg["out"], "eval.csv"))
    _write_summary(os.path.join(cfg["out"], "summary.txt"), [
        f"checkpoint: {meta['format']}",
        f"images: {len(rows)}",
        f"psnr: {summary['psnr']:.4f}",
        f"ssim: {summary['ssim']:.4f}",
        f"psnr_in: {summary['psnr_in']:.4f}",
        f"ssim_in: {summary['ssim_in']:.4f}",
    ])
    print(f"psnr {summary['psnr']:.3f} dB, ssim {summary['ssim']:.4f} "
          f"over {len(rows)} test pairs")


def cmd_report(cfg: dict) -> None:
    _require(cfg, "ckpt", "out")
    model, meta = model_from_entries(load_checkpoint(cfg["ckpt"]))
    if meta["format"] == "fp32":
        bits_w = bits_a = 32
        beta = 0.0
    else:
        bits_w, bits_a, beta = meta["bits_w"], meta["bits_a"], meta["beta"]
    report = report_compression(model, bits_w, bits_a, beta)
    os.makedirs(cfg["out"], exist_ok=True)
    write_report_csv(report, os.path.join(cfg["out"], "compression.csv"))
    _write_summary(os.path.join(cfg["out"], "summary.txt"),
                   format_report(report).splitlines())
    print(f"params down {report.params_reduction_pct:.2f}%, "
          f"ops down {report.ops_reduction_pct:.2f}%")


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "quantize": cmd_quantize,
    "eval": cmd_eval,
    "report": cmd_report,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moirequant",
        description="Post-training quantization toolkit for a compact demoireing CNN")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--ckpt")
        p.add_argument("--data")
        p.add_argument("--bits-w", dest="bits_w", type=int)
        p.add_argument("--bits-a", dest="bits_a", type=int)
        p.add_argument("--beta", type=float)
        p.add_argument("--gamma1", type=float)
        p.add_argument("--gamma2", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--freq-level", dest="freq_level", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--lambda-p", dest="lambda_p", type=float)
        p.add_argument("--crop", type=int)
        p.add_argument("--method")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args, args.command)
        _COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
