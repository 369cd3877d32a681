"""Run configuration: a flat key = value text format shared by every CLI
subcommand.

Lines are `dotted.key = value`; blank lines and `#` comments are ignored.
Every key has a default, unknown keys are rejected, and a parsed config can
be re-emitted in canonical form (sorted keys, shortest-round-trip floats) so
that a run started from its own resolved config reproduces byte-identical
outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .blocks import BLOCK_KINDS
from .degrade import KERNEL_KINDS, SynthSpec
from .losses import LossWeights
from .model import SKIP_MODES, DarkIRConfig
from .trainer import TrainConfig

__all__ = [
    "ConfigError",
    "SCHEMA",
    "default_config",
    "parse_text",
    "load",
    "resolved_text",
    "write_resolved",
    "model_config",
    "train_config",
    "synth_spec",
    "apply_seed",
]


class ConfigError(ValueError):
    """Malformed text, unknown key, or a value of the wrong shape."""


# ---------------------------------------------------------------------------
# Value codecs. Each key carries (parse, format) so emission round-trips.

def _parse_int(s: str) -> int:
    try:
        return int(s, 10)
    except ValueError:
        raise ConfigError(f"expected an integer, got {s!r}") from None


def _parse_float(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise ConfigError(f"expected a number, got {s!r}") from None
    return v


def _parse_bool(s: str) -> bool:
    if s == "true":
        return True
    if s == "false":
        return False
    raise ConfigError(f"expected true or false, got {s!r}")


def _parse_ints(s: str) -> tuple[int, ...]:
    parts = [p.strip() for p in s.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"expected comma-separated integers, got {s!r}")
    return tuple(_parse_int(p) for p in parts)


def _parse_str(s: str) -> str:
    return s


def _choice(options: tuple[str, ...]) -> Callable[[str], str]:
    def parse(s: str) -> str:
        if s not in options:
            raise ConfigError(f"expected one of {', '.join(options)}; got {s!r}")
        return s
    return parse


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class KeySpec:
    parse: Callable[[str], object]
    default: object


SCHEMA: dict[str, KeySpec] = {
    # architecture
    "model.width": KeySpec(_parse_int, 32),
    "model.enc_blocks": KeySpec(_parse_ints, (1, 2, 4)),
    "model.mid_blocks": KeySpec(_parse_int, 4),
    "model.dec_blocks": KeySpec(_parse_ints, (2, 2, 2)),
    "model.dilations": KeySpec(_parse_ints, (1, 4, 9)),
    "model.skip_mode": KeySpec(_choice(SKIP_MODES), "add"),
    "model.global_residual": KeySpec(_parse_bool, True),
    "model.enc_kind": KeySpec(_choice(BLOCK_KINDS), "eblock"),
    "model.dec_kind": KeySpec(_choice(BLOCK_KINDS), "dblock"),
    "model.ffn_extra_depthwise": KeySpec(_parse_bool, True),
    "model.seed": KeySpec(_parse_int, 0),
    # optimizer / schedule / loss weights
    "train.total_steps": KeySpec(_parse_int, 2000),
    "train.batch_size": KeySpec(_parse_int, 4),
    "train.crop_size": KeySpec(_parse_int, 64),
    "train.lr0": KeySpec(_parse_float, 5e-4),
    "train.lr_min": KeySpec(_parse_float, 1e-6),
    "train.beta1": KeySpec(_parse_float, 0.9),
    "train.beta2": KeySpec(_parse_float, 0.9),
    "train.weight_decay": KeySpec(_parse_float, 1e-3),
    "train.eps": KeySpec(_parse_float, 1e-8),
    "train.seed": KeySpec(_parse_int, 0),
    "train.augment": KeySpec(_parse_bool, True),
    "train.grad_clip": KeySpec(_parse_float, 0.0),
    "train.use_lol": KeySpec(_parse_bool, True),
    "train.checkpoint_every": KeySpec(_parse_int, 0),
    "train.log_every": KeySpec(_parse_int, 1),
    "train.lambda_pixel": KeySpec(_parse_float, 1.0),
    "train.lambda_percep": KeySpec(_parse_float, 1e-2),
    "train.lambda_edge": KeySpec(_parse_float, 50.0),
    # synthetic degradation
    "synth.count": KeySpec(_parse_int, 16),
    "synth.seed": KeySpec(_parse_int, 0),
    "synth.scale_min": KeySpec(_parse_float, 0.2),
    "synth.scale_max": KeySpec(_parse_float, 0.6),
    "synth.gamma_min": KeySpec(_parse_float, 1.2),
    "synth.gamma_max": KeySpec(_parse_float, 2.2),
    "synth.read_sigma_min": KeySpec(_parse_float, 0.01),
    "synth.read_sigma_max": KeySpec(_parse_float, 0.04),
    "synth.shot_sigma": KeySpec(_parse_float, 0.0),
    "synth.kernel": KeySpec(_choice(KERNEL_KINDS), "gaussian"),
    "synth.kernel_size": KeySpec(_parse_int, 9),
    "synth.blur_sigma_min": KeySpec(_parse_float, 0.6),
    "synth.blur_sigma_max": KeySpec(_parse_float, 2.0),
    "synth.motion_steps_min": KeySpec(_parse_int, 4),
    "synth.motion_steps_max": KeySpec(_parse_int, 12),
    # paths
    "data.clean_dir": KeySpec(_parse_str, ""),
    "data.pair_dir": KeySpec(_parse_str, ""),
    "out.dir": KeySpec(_parse_str, "runs/out"),
    # inference / evaluation
    "infer.checkpoint": KeySpec(_parse_str, ""),
    "infer.input": KeySpec(_parse_str, ""),
    # profiling / ablation
    "profile.widths": KeySpec(_parse_ints, (16, 32, 64)),
    "profile.size": KeySpec(_parse_str, "256x256"),
    "ablate.steps": KeySpec(_parse_int, 200),
}


def default_config() -> dict[str, object]:
    return {k: s.default for k, s in SCHEMA.items()}


def parse_text(text: str) -> dict[str, object]:
    """Parse config text over the defaults. Duplicate and unknown keys fail."""
    cfg = default_config()
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            cfg[key] = SCHEMA[key].parse(value)
        except ConfigError as e:
            raise ConfigError(f"line {lineno}: {key}: {e}") from None
    return cfg


def load(path) -> dict[str, object]:
    return parse_text(Path(path).read_text(encoding="utf-8"))


def resolved_text(cfg: dict[str, object]) -> str:
    """Canonical emission: sorted keys, one per line. Parsing it back yields
    an equal config, and re-emitting yields identical bytes."""
    unknown = set(cfg) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    lines = [f"{k} = {_fmt(cfg[k])}" for k in sorted(cfg)]
    return "\n".join(lines) + "\n"


def write_resolved(cfg: dict[str, object], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.resolved"
    path.write_text(resolved_text(cfg), encoding="utf-8")
    return path


def apply_seed(cfg: dict[str, object], seed: int) -> None:
    """A CLI --seed override retargets every stream at once."""
    cfg["model.seed"] = seed
    cfg["train.seed"] = seed
    cfg["synth.seed"] = seed


# ---------------------------------------------------------------------------
# Typed builders. Dataclass validators run here, so bad combinations surface
# as ConfigError with the offending key group named.

def model_config(cfg: dict[str, object]) -> DarkIRConfig:
    try:
        return DarkIRConfig(
            width=cfg["model.width"],
            enc_blocks=cfg["model.enc_blocks"],
            mid_blocks=cfg["model.mid_blocks"],
            dec_blocks=cfg["model.dec_blocks"],
            dilations=cfg["model.dilations"],
            skip_mode=cfg["model.skip_mode"],
            global_residual=cfg["model.global_residual"],
            enc_kind=cfg["model.enc_kind"],
            dec_kind=cfg["model.dec_kind"],
            ffn_extra_depthwise=cfg["model.ffn_extra_depthwise"],
        )
    except (ValueError, TypeError) as e:
        raise ConfigError(f"model.*: {e}") from None


def train_config(cfg: dict[str, object]) -> TrainConfig:
    try:
        weights = LossWeights(
            lambda_pixel=cfg["train.lambda_pixel"],
            lambda_percep=cfg["train.lambda_percep"],
            lambda_edge=cfg["train.lambda_edge"],
        )
        return TrainConfig(
            total_steps=cfg["train.total_steps"],
            batch_size=cfg["train.batch_size"],
            crop_size=cfg["train.crop_size"],
            lr0=cfg["train.lr0"],
            lr_min=cfg["train.lr_min"],
            beta1=cfg["train.beta1"],
            beta2=cfg["train.beta2"],
            weight_decay=cfg["train.weight_decay"],
            eps=cfg["train.eps"],
            seed=cfg["train.seed"],
            augment=cfg["train.augment"],
            grad_clip=cfg["train.grad_clip"],
            use_lol=cfg["train.use_lol"],
            weights=weights,
            checkpoint_every=cfg["train.checkpoint_every"],
            log_every=cfg["train.log_every"],
        )
    except (ValueError, TypeError) as e:
        raise ConfigError(f"train.*: {e}") from None


def synth_spec(cfg: dict[str, object]) -> SynthSpec:
    try:
        return SynthSpec(
            n=cfg["synth.count"],
            seed=cfg["synth.seed"],
            s_range=(cfg["synth.scale_min"], cfg["synth.scale_max"]),
            g_range=(cfg["synth.gamma_min"], cfg["synth.gamma_max"]),
            read_sigma_range=(cfg["synth.read_sigma_min"], cfg["synth.read_sigma_max"]),
            shot_sigma=cfg["synth.shot_sigma"],
            kernel=cfg["synth.kernel"],
            kernel_size=cfg["synth.kernel_size"],
            gaussian_sigma_range=(cfg["synth.blur_sigma_min"], cfg["synth.blur_sigma_max"]),
            motion_steps_range=(cfg["synth.motion_steps_min"], cfg["synth.motion_steps_max"]),
        )
    except (ValueError, TypeError) as e:
        raise ConfigError(f"synth.*: {e}") from None
