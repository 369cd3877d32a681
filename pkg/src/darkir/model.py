"""Encoder-decoder restoration model.

Topology (three scales, bottleneck at 1/8 resolution):

    3x3 conv -> [enc blocks, stride-2 conv doubling width] x3
             -> mid blocks -> 1x1 side head to a 3-channel 1/8 estimate
             -> [dec blocks, 1x1 conv + pixel-shuffle upsample halving width,
                 skip merge with the matching encoder level] x3
             -> 3x3 conv (+ global residual from the input)

One layer-table enumeration drives parameter allocation, checkpoint naming
and the analytic parameter/MAC counts, so the analytic numbers refer to
exactly the layers the forward pass executes. MAC totals follow the
convention of the runtime counter: convolution multiplies at batch 1, plus
(optionally) FFT work at 5*H*W*log2(H*W) per channel per transform.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from . import blocks as bk
from .autodiff import Tape, VarId
from .conv import ConvSpec, conv_out_extent
from .profiler import fft_transform_macs
from .tensor import ShapeError, Tensor

__all__ = [
    "DarkIRConfig",
    "Model",
    "build",
    "count_params",
    "count_macs",
    "skip_propagate",
    "config_to_text",
    "config_from_text",
    "infer_tensors",
]

SKIP_MODES = ("add", "lut1d", "lut1d_double")
LEVELS = 3
DOWN8 = 1 << LEVELS


@dataclass(frozen=True)
class DarkIRConfig:
    width: int = 32
    enc_blocks: tuple[int, int, int] = (1, 2, 4)
    mid_blocks: int = 4
    dec_blocks: tuple[int, int, int] = (2, 2, 2)
    dilations: tuple[int, ...] = (1, 4, 9)
    skip_mode: str = "add"
    global_residual: bool = True
    enc_kind: str = "eblock"
    dec_kind: str = "dblock"
    ffn_extra_depthwise: bool = True

    def __post_init__(self):
        if self.width < 2 or self.width % 2 != 0:
            raise ValueError(f"width must be even and >= 2, got {self.width}")
        for name in ("enc_blocks", "dec_blocks"):
            v = getattr(self, name)
            if len(v) != LEVELS or any(int(b) != b or b < 0 for b in v):
                raise ValueError(f"{name} must be {LEVELS} non-negative counts, got {v}")
        if self.mid_blocks < 0:
            raise ValueError(f"mid_blocks must be non-negative, got {self.mid_blocks}")
        if not self.dilations or any(d < 1 for d in self.dilations):
            raise ValueError(f"dilations must be positive, got {self.dilations}")
        if len(set(self.dilations)) != len(self.dilations):
            raise ValueError(f"dilations must be distinct, got {self.dilations}")
        if self.skip_mode not in SKIP_MODES:
            raise ValueError(f"skip_mode must be one of {SKIP_MODES}, got {self.skip_mode!r}")
        for name in ("enc_kind", "dec_kind"):
            v = getattr(self, name)
            if v not in bk.BLOCK_KINDS:
                raise ValueError(f"{name} must be one of {bk.BLOCK_KINDS}, got {v!r}")


def _skip_defs(mode: str, c: int) -> list:
    # Both LUT modes are residual on the encoder feature; their final
    # pointwise starts at zero so they reduce to plain addition at init.
    if mode == "add":
        return []
    if mode == "lut1d":
        return [bk._pw("pw1", c, c), bk._pw("pw2", c // 2, c, zero=True)]
    return [bk._pw("pw1", c, 2 * c), bk._pw("pw2", c, c, zero=True)]


def _block_table(config: DarkIRConfig, kind: str, c: int) -> list:
    return bk.block_defs(kind, c, config.dilations, config.ffn_extra_depthwise)


def enumerate_modules(config: DarkIRConfig):
    """Yield (prefix, defs, divisor) in execution order.

    `divisor` scales the input extent down to the module's working extent.
    """
    w = config.width
    yield "intro.", [bk.ConvDef("conv", 3, w, ConvSpec(3))], 1
    for lvl in range(LEVELS):
        c = w << lvl
        for b in range(config.enc_blocks[lvl]):
            yield f"enc{lvl}.b{b}.", _block_table(config, config.enc_kind, c), 1 << lvl
        yield f"down{lvl}.", [bk.ConvDef("conv", c, 2 * c, ConvSpec(3, stride=2))], 1 << lvl
    cb = w << LEVELS
    for b in range(config.mid_blocks):
        yield f"mid.b{b}.", _block_table(config, config.enc_kind, cb), DOWN8
    yield "head.", [bk.ConvDef("conv", cb, 3, ConvSpec(1))], DOWN8
    for lvl in range(LEVELS):
        c = cb >> lvl
        div = DOWN8 >> lvl
        for b in range(config.dec_blocks[lvl]):
            yield f"dec{lvl}.b{b}.", _block_table(config, config.dec_kind, c), div
        yield f"up{lvl}.", [bk.ConvDef("conv", c, 2 * c, ConvSpec(1))], div
        yield f"skip{lvl}.", _skip_defs(config.skip_mode, c // 2), div // 2
    yield "outro.", [bk.ConvDef("conv", w, 3, ConvSpec(3))], 1


def parameter_names(config: DarkIRConfig) -> list[str]:
    names: list[str] = []
    for prefix, defs, _ in enumerate_modules(config):
        for d in defs:
            if isinstance(d, bk.ConvDef):
                names.append(prefix + d.name + ".w")
                if d.bias:
                    names.append(prefix + d.name + ".b")
            elif isinstance(d, bk.NormDef):
                names.append(prefix + d.name + ".gain")
                names.append(prefix + d.name + ".offset")
    return names


def count_params(config: DarkIRConfig) -> int:
    total = 0
    for _, defs, _ in enumerate_modules(config):
        for d in defs:
            if isinstance(d, bk.ConvDef):
                k = d.spec.kernel_size
                total += d.cout * (d.cin // d.spec.groups) * k * k
                if d.bias:
                    total += d.cout
            elif isinstance(d, bk.NormDef):
                total += 2 * d.channels
    return total


def count_macs(config: DarkIRConfig, h: int, w: int, include_fft: bool = False) -> int:
    """Multiply count of one forward pass at batch 1 and extent (h, w)."""
    _check_extent(h, w)
    total = 0
    for _, defs, div in enumerate_modules(config):
        hi, wi = h // div, w // div
        for d in defs:
            if isinstance(d, bk.ConvDef):
                if d.domain == "pooled":
                    ho = wo = 1
                elif d.domain == "freq":
                    ho, wo = hi, wi // 2 + 1
                else:
                    ho = conv_out_extent(hi, d.spec)
                    wo = conv_out_extent(wi, d.spec)
                k = d.spec.kernel_size
                total += ho * wo * d.cout * (d.cin // d.spec.groups) * k * k
            elif isinstance(d, bk.FftDef) and include_fft:
                total += 2 * d.channels * fft_transform_macs(hi, wi)
    return total


def _check_extent(h: int, w: int) -> None:
    if h % DOWN8 or w % DOWN8:
        pad_h = (DOWN8 - h % DOWN8) % DOWN8
        pad_w = (DOWN8 - w % DOWN8) % DOWN8
        raise ShapeError(
            f"extent ({h}, {w}) must be divisible by {DOWN8}; "
            f"pad by ({pad_h}, {pad_w}) to ({h + pad_h}, {w + pad_w})"
        )


class Model:
    """Bundle of a config and its named parameter tensors."""

    def __init__(self, config: DarkIRConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def decay_names(self) -> set[str]:
        """Parameters subject to weight decay: conv weights only."""
        return {n for n in self.params if n.endswith(".w")}

    def forward(self, tape: Tape, y: Tensor | VarId,
                leaf_map: dict[str, VarId] | None = None) -> tuple[VarId, VarId]:
        """Run the network; returns (restored, eighth-scale estimate).

        `leaf_map`, when supplied, is filled with the VarId each parameter
        was registered under, which is what an optimizer needs to pull
        gradients back out by name.
        """
        if isinstance(y, Tensor):
            y = tape.leaf(y)
        yv = tape.value(y)
        if yv.ndim != 4 or yv.shape[1] != 3:
            raise ShapeError(f"forward wants (N, 3, H, W), got {yv.shape}")
        _check_extent(yv.shape[2], yv.shape[3])

        cfg = self.config
        cache: dict[str, VarId] = leaf_map if leaf_map is not None else {}

        def leaf(name: str) -> VarId:
            if name not in cache:
                cache[name] = tape.leaf(self.params[name])
            return cache[name]

        def prefixed(prefix: str):
            return lambda name: leaf(prefix + name)

        def conv(prefix: str, x: VarId, spec: ConvSpec) -> VarId:
            return ad.conv2d(tape, x, leaf(prefix + "conv.w"), leaf(prefix + "conv.b"), spec)

        def run_blocks(x: VarId, stem: str, count: int, kind: str, c: int) -> VarId:
            for b in range(count):
                p = bk.bind_block(prefixed(f"{stem}.b{b}."), kind, c,
                                  cfg.dilations, cfg.ffn_extra_depthwise)
                x = bk.block_forward(tape, x, p)
            return x

        f = conv("intro.", y, ConvSpec(3))
        skips: list[VarId] = []
        for lvl in range(LEVELS):
            f = run_blocks(f, f"enc{lvl}", cfg.enc_blocks[lvl], cfg.enc_kind,
                           cfg.width << lvl)
            skips.append(f)
            f = conv(f"down{lvl}.", f, ConvSpec(3, stride=2))
        f = run_blocks(f, "mid", cfg.mid_blocks, cfg.enc_kind, cfg.width * DOWN8)
        down8 = conv("head.", f, ConvSpec(1))
        for lvl in range(LEVELS):
            f = run_blocks(f, f"dec{lvl}", cfg.dec_blocks[lvl], cfg.dec_kind,
                           (cfg.width * DOWN8) >> lvl)
            f = conv(f"up{lvl}.", f, ConvSpec(1))
            f = ad.pixel_shuffle(tape, f, 2)
            f = skip_propagate(tape, skips[LEVELS - 1 - lvl], f, cfg.skip_mode,
                               prefixed(f"skip{lvl}."))
        f = conv("outro.", f, ConvSpec(3))
        if cfg.global_residual:
            f = ad.add(tape, f, y)
        return f, down8


def skip_propagate(tape: Tape, enc: VarId, dec: VarId, mode: str, lookup=None) -> VarId:
    """Merge an encoder feature into the upsampled decoder feature.

    add: enc + dec. lut1d / lut1d_double: a gated pointwise residual applied
    to the encoder feature first (per-channel intensity curve; the double
    variant expands channels 2x inside).
    """
    ev, dv = tape.value(enc), tape.value(dec)
    if ev.shape != dv.shape:
        raise ShapeError(f"skip_propagate: encoder {ev.shape} vs decoder {dv.shape}")
    if mode == "add":
        return ad.add(tape, enc, dec)
    if mode not in SKIP_MODES:
        raise ValueError(f"unknown skip mode {mode!r}")
    h = ad.conv2d(tape, enc, lookup("pw1.w"), lookup("pw1.b"), ConvSpec(1))
    h = bk.simple_gate(tape, h)
    h = ad.conv2d(tape, h, lookup("pw2.w"), lookup("pw2.b"), ConvSpec(1))
    return ad.add(tape, ad.add(tape, enc, h), dec)


def build(config: DarkIRConfig, seed: int = 0, dtype=np.float32) -> Model:
    """Allocate and initialize all parameters; deterministic in (config, seed)."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for prefix, defs, _ in enumerate_modules(config):
        for name, t in bk.init_params(defs, rng, dtype=dtype).items():
            params[prefix + name] = t
    return Model(config, params)


def infer_tensors(model: Model, y: Tensor) -> tuple[Tensor, Tensor]:
    """Forward pass without gradient bookkeeping kept by the caller."""
    tape = Tape()
    xhat, down8 = model.forward(tape, y)
    return tape.value(xhat), tape.value(down8)


# ---------------------------------------------------------------------------
# Config <-> text (stored inside checkpoints).

def config_to_text(config: DarkIRConfig) -> str:
    lines = []
    for f in fields(config):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> DarkIRConfig:
    raw: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()
    known = {f.name: f for f in fields(DarkIRConfig)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        if name in ("enc_blocks", "dec_blocks", "dilations"):
            kwargs[name] = tuple(int(x) for x in value.split(",") if x)
        elif name in ("width", "mid_blocks"):
            kwargs[name] = int(value)
        elif name in ("global_residual", "ffn_extra_depthwise"):
            kwargs[name] = value.lower() == "true"
        else:
            kwargs[name] = value
    return DarkIRConfig(**kwargs)
