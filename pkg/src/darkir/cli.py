"""Command line front end.

Subcommands: synth, train, infer, eval, profile, ablate. Every run reads one
flat config file, writes its outputs under out.dir and drops the fully
resolved configuration next to them, so any run can be reproduced from its
own output directory.

Exit codes: 0 success, 2 configuration problem, 3 missing or malformed
files, 4 numerical abort during training.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint, config as cfgmod, report
from .checkpoint import CheckpointError
from .config import ConfigError
from .degrade import load_pairs, synth_dataset
from .dkt import FormatError
from .losses import psnr, ssim
from .model import DarkIRConfig, Model, build, count_macs, count_params, infer_tensors
from .ppm import PpmError, read_ppm, write_ppm
from .tensor import Tensor
from .trainer import NumericalAbort, train, write_log_csv

__all__ = ["main"]

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, _, w = text.partition("x")
        return int(h), int(w)
    except ValueError:
        raise ConfigError(f"--size wants HxW, got {text!r}") from None


def _require(cfg: dict, key: str) -> str:
    v = cfg[key]
    if not v:
        raise ConfigError(f"{key} must be set for this command")
    return str(v)


def _out_dir(cfg: dict) -> Path:
    out = Path(str(cfg["out.dir"]))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(cfg: dict, ckpt_key: str) -> Model:
    path = cfg[ckpt_key]
    if path:
        return checkpoint.load(path)
    return build(cfgmod.model_config(cfg), seed=int(cfg["model.seed"]))


def _pad_to_multiple(img: np.ndarray, mult: int) -> tuple[np.ndarray, int, int]:
    """Edge-replicate pad H and W up to a multiple; returns pad amounts."""
    _, h, w = img.shape
    ph = (-h) % mult
    pw = (-w) % mult
    if ph or pw:
        img = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="edge")
    return img, ph, pw


# ---------------------------------------------------------------------------
# Subcommands. Each returns the process exit code.

def cmd_synth(cfg: dict) -> int:
    out = _out_dir(cfg)
    clean_dir = _require(cfg, "data.clean_dir")
    spec = cfgmod.synth_spec(cfg)
    pair_dir = out / "pairs"
    rows = synth_dataset(clean_dir, pair_dir, spec)
    cfgmod.write_resolved(cfg, out)
    print(f"wrote {len(rows)} pairs to {pair_dir}")
    return 0


def cmd_train(cfg: dict) -> int:
    out = _out_dir(cfg)
    pairs = load_pairs(_require(cfg, "data.pair_dir"))
    model = build(cfgmod.model_config(cfg), seed=int(cfg["model.seed"]))
    tcfg = cfgmod.train_config(cfg)
    cfgmod.write_resolved(cfg, out)
    log = train(model, pairs, tcfg, out_dir=out)
    write_log_csv(log, out / "train_log.csv")
    if log:
        report.save_loss_curves(log, out / "train_log.png")
    print(f"trained {tcfg.total_steps} steps; checkpoint and log in {out}")
    return 0


def cmd_infer(cfg: dict, emit_intermediate: bool) -> int:
    out = _out_dir(cfg)
    model = _load_model(cfg, "infer.checkpoint")
    src = Path(_require(cfg, "infer.input"))
    files = sorted(src.glob("*.ppm")) if src.is_dir() else [src]
    if not files:
        raise FileNotFoundError(f"no .ppm inputs under {src}")
    cfgmod.write_resolved(cfg, out)
    for f in files:
        img = read_ppm(f)
        padded, ph, pw = _pad_to_multiple(img.data, 8)
        xhat, down8 = infer_tensors(model, Tensor(padded[None]))
        restored = xhat.data[0]
        if ph or pw:
            restored = restored[:, : img.shape[1], : img.shape[2]]
        write_ppm(out / f"{f.stem}_restored.ppm", Tensor(np.ascontiguousarray(restored)))
        if emit_intermediate:
            write_ppm(out / f"{f.stem}_down8.ppm", Tensor(down8.data[0]))
    print(f"restored {len(files)} image(s) into {out}")
    return 0


def _eval_rows(model: Model, pairs) -> list[dict]:
    rows = []
    for i, (y, x) in enumerate(pairs):
        xhat, _ = infer_tensors(model, Tensor(y.data[None]))
        target = Tensor(x.data[None])
        rows.append({"pair": i, "psnr_db": psnr(target, xhat),
                     "ssim": ssim(target, xhat)})
    return rows


def cmd_eval(cfg: dict) -> int:
    out = _out_dir(cfg)
    pairs = load_pairs(_require(cfg, "data.pair_dir"))
    model = _load_model(cfg, "infer.checkpoint")
    rows = _eval_rows(model, pairs)
    mean_row = {
        "pair": "mean",
        "psnr_db": float(np.mean([r["psnr_db"] for r in rows])),
        "ssim": float(np.mean([r["ssim"] for r in rows])),
    }
    cfgmod.write_resolved(cfg, out)
    report.write_csv(out / "eval.csv", ("pair", "psnr_db", "ssim"), rows + [mean_row])
    report.save_metric_chart(rows, out / "eval.png", "pair", "psnr_db", "PSNR (dB)")
    print(f"eval over {len(rows)} pairs: {mean_row['psnr_db']:.2f} dB, "
          f"SSIM {mean_row['ssim']:.4f}")
    return 0


def cmd_profile(cfg: dict, size: tuple[int, int] | None) -> int:
    out = _out_dir(cfg)
    h, w = size if size else _parse_size(str(cfg["profile.size"]))
    base = cfgmod.model_config(cfg)
    rows = []
    for width in cfg["profile.widths"]:
        mc = replace(base, width=int(width))
        rows.append({
            "width": int(width),
            "params": count_params(mc),
            "macs_conv": count_macs(mc, h, w, include_fft=False),
            "macs_with_fft": count_macs(mc, h, w, include_fft=True),
        })
    cfgmod.write_resolved(cfg, out)
    cols = ("width", "params", "macs_conv", "macs_with_fft")
    report.write_csv(out / "profile.csv", cols, rows)
    report.save_profile_chart(rows, out / "profile.png")
    for r in rows:
        print(f"width {r['width']:>3}: {r['params'] / 1e6:.2f}M params, "
              f"{r['macs_conv'] / 1e9:.2f}G / {r['macs_with_fft'] / 1e9:.2f}G MACs "
              f"at {h}x{w}")
    return 0


def _ablate_variants(suite: str, base: DarkIRConfig, cfg: dict):
    """(name, model config, train config transform) triples for one suite."""
    tc = cfgmod.train_config(cfg)
    plain = replace(base, enc_kind="nafblock", dec_kind="nafblock",
                    ffn_extra_depthwise=False)
    if suite == "blocks":
        return [
            ("baseline", plain, tc),
            ("freq_enc", replace(plain, enc_kind="eblock"), tc),
            ("dilated_dec", replace(plain, dec_kind="dblock",
                                    ffn_extra_depthwise=True), tc),
            ("freq_enc+dilated_dec", replace(base, enc_kind="eblock",
                                             dec_kind="dblock"), tc),
            ("phase_enc", replace(base, enc_kind="eblock_phase",
                                  dec_kind="dblock"), tc),
            ("no_ffn_depthwise", replace(base, enc_kind="eblock", dec_kind="dblock",
                                         ffn_extra_depthwise=False), tc),
            ("skip_lut1d", replace(base, enc_kind="eblock", dec_kind="dblock",
                                   skip_mode="lut1d"), tc),
            ("skip_lut1d_double", replace(base, enc_kind="eblock", dec_kind="dblock",
                                          skip_mode="lut1d_double"), tc),
        ]
    if suite == "attention":
        return [
            ("dilated", replace(base, dec_kind="dblock"), tc),
            ("large_kernel", replace(base, dec_kind="lka"), tc),
        ]
    if suite == "loss":
        full = tc.weights
        return [
            ("full", base, tc),
            ("no_edge", base, replace(tc, weights=replace(full, lambda_edge=0.0))),
            ("no_eighth_scale", base, replace(tc, use_lol=False)),
        ]
    if suite == "skip":
        return [(m, replace(base, skip_mode=m), tc) for m in
                ("add", "lut1d", "lut1d_double")]
    raise ConfigError(f"unknown ablation suite {suite!r}; "
                      f"pick blocks, attention, loss or skip")


def cmd_ablate(cfg: dict, suite: str, size: tuple[int, int] | None) -> int:
    out = _out_dir(cfg)
    h, w = size if size else _parse_size(str(cfg["profile.size"]))
    pairs = load_pairs(_require(cfg, "data.pair_dir"))
    base = cfgmod.model_config(cfg)
    steps = int(cfg["ablate.steps"])
    rows = []
    for name, mc, tc in _ablate_variants(suite, base, cfg):
        tc = replace(tc, total_steps=steps, checkpoint_every=0)
        model = build(mc, seed=int(cfg["model.seed"]))
        train(model, pairs, tc)
        metrics = _eval_rows(model, pairs)
        rows.append({
            "variant": name,
            "params": count_params(mc),
            "macs_conv": count_macs(mc, h, w, include_fft=False),
            "macs_with_fft": count_macs(mc, h, w, include_fft=True),
            "psnr_db": float(np.mean([m["psnr_db"] for m in metrics])),
            "ssim": float(np.mean([m["ssim"] for m in metrics])),
        })
        print(f"{suite}/{name}: {rows[-1]['psnr_db']:.2f} dB after {steps} steps")
    cfgmod.write_resolved(cfg, out)
    cols = ("variant", "params", "macs_conv", "macs_with_fft", "psnr_db", "ssim")
    report.write_csv(out / f"ablate_{suite}.csv", cols, rows)
    report.save_metric_chart(rows, out / f"ablate_{suite}.png",
                             "variant", "psnr_db", "PSNR (dB)")
    return 0


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="darkir",
                                description="Low-light restoration toolkit.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (
        ("synth", "degrade clean images into training pairs"),
        ("train", "fit a model on synthesized pairs"),
        ("infer", "restore images with a trained model"),
        ("eval", "PSNR/SSIM of a model over a pair set"),
        ("profile", "parameter and multiply counts by width"),
        ("ablate", "train and compare architecture variants"),
    ):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True, help="path to a run config file")
        sp.add_argument("--seed", type=int, default=None,
                        help="override every seed in the config")
        if name in ("profile", "ablate"):
            sp.add_argument("--size", default=None,
                            help="input extent HxW for multiply counts")
        if name == "ablate":
            sp.add_argument("--suite", required=True,
                            choices=("blocks", "attention", "loss", "skip"))
        if name == "infer":
            sp.add_argument("--emit-intermediate", action="store_true",
                            help="also write the eighth-scale estimates")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config)
        if args.seed is not None:
            cfgmod.apply_seed(cfg, args.seed)
        size = _parse_size(args.size) if getattr(args, "size", None) else None
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "infer":
            return cmd_infer(cfg, args.emit_intermediate)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "profile":
            return cmd_profile(cfg, size)
        return cmd_ablate(cfg, args.suite, size)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, IsADirectoryError, FormatError, PpmError,
            CheckpointError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except NumericalAbort as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        # validators deeper in the stack (sizes, extents, ranges)
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
