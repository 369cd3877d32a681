"""Attention/FFN blocks of the restoration network.

Every block follows the pre-norm residual pattern
    z1 = mixer(norm(z)) + z
    z2 = ffn(norm(z1)) + z1
and every residual branch ends in a projection that is zero-initialized, so
a freshly built block is the exact identity.

Four block families share this frame:
  * eblock: spatial attention (SpAM) + frequency MLP on FFT amplitudes,
  * dblock: dilated spatial attention (three parallel depthwise branches)
    + gated FFN with an optional extra depthwise,
  * nafblock: SpAM + plain gated channel MLP,
  * lka: large-kernel multiplicative attention in the dblock frame
    (ablation reference),
  * eblock_phase: eblock whose frequency MLP also edits phase through a
    residual, wrapped branch (exploratory variant).

Channel expansion inside mixers and FFNs is fixed at 2x; SimpleGate halves
it back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, VarId
from .conv import ConvSpec
from .tensor import Tensor

__all__ = [
    "ConvDef",
    "NormDef",
    "FftDef",
    "Conv2dParams",
    "LayerNormParams",
    "BLOCK_KINDS",
    "block_defs",
    "bind_block",
    "block_forward",
    "init_params",
    "simple_gate",
    "sca",
    "spam_forward",
    "fremlp_forward",
    "eblock_forward",
    "dispam_forward",
    "gated_ffn_forward",
    "dblock_forward",
    "nafblock_forward",
    "lka_forward",
    "phase_eblock_forward",
]

NORM_EPS = 1e-6


# ---------------------------------------------------------------------------
# Layer descriptors: one table per block drives parameter allocation, the
# analytic parameter/MAC accounting and checkpoint naming.

@dataclass(frozen=True)
class ConvDef:
    name: str
    cin: int
    cout: int
    spec: ConvSpec
    bias: bool = True
    zero_init: bool = False
    domain: str = "full"  # full | freq (half-plane grid) | pooled (1x1)


@dataclass(frozen=True)
class NormDef:
    name: str
    channels: int


@dataclass(frozen=True)
class FftDef:
    channels: int  # one forward plus one inverse transform at this width


def _pw(name: str, cin: int, cout: int, zero: bool = False, domain: str = "full") -> ConvDef:
    return ConvDef(name, cin, cout, ConvSpec(1), zero_init=zero, domain=domain)


def _dw(name: str, c: int, k: int = 3, dilation: int = 1, bias: bool = True) -> ConvDef:
    return ConvDef(name, c, c, ConvSpec(k, dilation=dilation, groups=c), bias=bias)


def _spam_defs(c: int) -> list:
    e = 2 * c
    return [
        _pw("spam.expand", c, e),
        _dw("spam.dw", e),
        _pw("spam.sca", c, c, domain="pooled"),
        _pw("spam.proj", c, c, zero=True),
    ]


def _fremlp_defs(c: int, with_phase: bool) -> list:
    defs = [
        _pw("fre.map1", c, 2 * c, domain="freq"),
        _pw("fre.map2", c, c, zero=True, domain="freq"),
    ]
    if with_phase:
        defs += [
            _pw("fre.pmap1", c, 2 * c, domain="freq"),
            _pw("fre.pmap2", c, c, zero=True, domain="freq"),
        ]
    return defs + [FftDef(c)]


def _dispam_defs(c: int, dilations) -> list:
    e = 2 * c
    defs = [_pw("att.pw_in", c, e)]
    defs += [_dw(f"att.dw_d{d}", e, dilation=d) for d in dilations]
    defs += [
        _pw("att.sca", e, e, domain="pooled"),
        _pw("att.pw_out", e, c, zero=True),
    ]
    return defs


def _lka_defs(c: int) -> list:
    e = 2 * c
    return [
        _pw("att.pw_in", c, e),
        _dw("att.dw5", e, k=5),
        _dw("att.dw7", e, k=7, dilation=3),
        _pw("att.attn", e, e),
        _pw("att.sca", e, e, domain="pooled"),
        _pw("att.pw_out", e, c, zero=True),
    ]


def _ffn_defs(c: int, extra_dw: bool) -> list:
    e = 2 * c
    defs = [_pw("ffn.expand", c, e)]
    if extra_dw:
        defs.append(_dw("ffn.dw", e, bias=False))
    defs.append(_pw("ffn.proj", c, c, zero=True))
    return defs


def block_defs(kind: str, c: int, dilations=(1, 4, 9), ffn_extra_dw: bool = True) -> list:
    """Layer table of one block at width c."""
    if kind == "eblock":
        mixer, tail = _spam_defs(c), _fremlp_defs(c, with_phase=False)
    elif kind == "eblock_phase":
        mixer, tail = _spam_defs(c), _fremlp_defs(c, with_phase=True)
    elif kind == "dblock":
        mixer, tail = _dispam_defs(c, dilations), _ffn_defs(c, extra_dw=ffn_extra_dw)
    elif kind == "nafblock":
        mixer, tail = _spam_defs(c), _ffn_defs(c, extra_dw=False)
    elif kind == "lka":
        mixer, tail = _lka_defs(c), _ffn_defs(c, extra_dw=ffn_extra_dw)
    else:
        raise ValueError(f"unknown block kind {kind!r}")
    return [NormDef("norm1", c)] + mixer + [NormDef("norm2", c)] + tail


BLOCK_KINDS = ("eblock", "dblock", "nafblock", "lka", "eblock_phase")


# ---------------------------------------------------------------------------
# Parameter materialization (used by the model builder and by tests).

def init_params(defs, rng: np.random.Generator, dtype=np.float32,
                zero_residuals: bool = True) -> dict[str, Tensor]:
    """Allocate tensors for a layer table.

    Convolutions draw from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start
    at zero; norm gains at one. Residual-final projections start at zero
    unless `zero_residuals` is disabled (gradient checks want dense ones).
    """
    out: dict[str, Tensor] = {}
    for d in defs:
        if isinstance(d, ConvDef):
            k = d.spec.kernel_size
            shape = (d.cout, d.cin // d.spec.groups, k, k)
            if d.zero_init and zero_residuals:
                w = np.zeros(shape, dtype=dtype)
            else:
                fan_in = (d.cin // d.spec.groups) * k * k
                bound = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=shape).astype(dtype)
            out[d.name + ".w"] = Tensor(w)
            if d.bias:
                out[d.name + ".b"] = Tensor(np.zeros(d.cout, dtype=dtype))
        elif isinstance(d, NormDef):
            out[d.name + ".gain"] = Tensor(np.ones(d.channels, dtype=dtype))
            out[d.name + ".offset"] = Tensor(np.zeros(d.channels, dtype=dtype))
    return out


# ---------------------------------------------------------------------------
# Bound parameter structures: VarId handles plus static conv metadata.

@dataclass
class Conv2dParams:
    w: VarId
    b: VarId | None
    spec: ConvSpec


@dataclass
class LayerNormParams:
    gain: VarId
    offset: VarId


@dataclass
class SpamParams:
    expand: Conv2dParams
    dw: Conv2dParams
    sca: Conv2dParams
    proj: Conv2dParams


@dataclass
class FreMlpParams:
    map1: Conv2dParams
    map2: Conv2dParams
    pmap1: Conv2dParams | None = None
    pmap2: Conv2dParams | None = None


@dataclass
class DiSpamParams:
    pw_in: Conv2dParams
    branches: tuple
    sca: Conv2dParams
    pw_out: Conv2dParams


@dataclass
class LkaParams:
    pw_in: Conv2dParams
    dw5: Conv2dParams
    dw7: Conv2dParams
    attn: Conv2dParams
    sca: Conv2dParams
    pw_out: Conv2dParams


@dataclass
class GatedFfnParams:
    expand: Conv2dParams
    dw: Conv2dParams | None
    proj: Conv2dParams


@dataclass
class BlockParams:
    kind: str
    norm1: LayerNormParams
    mixer: object
    norm2: LayerNormParams
    tail: object


def bind_block(lookup, kind: str, c: int, dilations=(1, 4, 9),
               ffn_extra_dw: bool = True) -> BlockParams:
    """Assemble a block's parameter structure at channel width c.

    `lookup(name)` resolves a table name (e.g. "spam.expand") plus suffix to
    the VarId of the materialized tensor; the model and the tests supply it.
    """
    defs = {d.name: d for d in block_defs(kind, c, dilations, ffn_extra_dw)
            if isinstance(d, ConvDef)}

    def conv(name: str) -> Conv2dParams:
        d = defs[name]
        b = lookup(name + ".b") if d.bias else None
        return Conv2dParams(lookup(name + ".w"), b, d.spec)

    def norm(name: str) -> LayerNormParams:
        return LayerNormParams(lookup(name + ".gain"), lookup(name + ".offset"))

    if kind in ("eblock", "eblock_phase", "nafblock"):
        mixer = SpamParams(conv("spam.expand"), conv("spam.dw"),
                           conv("spam.sca"), conv("spam.proj"))
    elif kind == "dblock":
        mixer = DiSpamParams(conv("att.pw_in"),
                             tuple(conv(f"att.dw_d{d}") for d in dilations),
                             conv("att.sca"), conv("att.pw_out"))
    elif kind == "lka":
        mixer = LkaParams(conv("att.pw_in"), conv("att.dw5"), conv("att.dw7"),
                          conv("att.attn"), conv("att.sca"), conv("att.pw_out"))
    else:
        raise ValueError(f"unknown block kind {kind!r}")

    if kind == "eblock":
        tail = FreMlpParams(conv("fre.map1"), conv("fre.map2"))
    elif kind == "eblock_phase":
        tail = FreMlpParams(conv("fre.map1"), conv("fre.map2"),
                            conv("fre.pmap1"), conv("fre.pmap2"))
    elif kind == "nafblock":
        tail = GatedFfnParams(conv("ffn.expand"), None, conv("ffn.proj"))
    else:
        tail = GatedFfnParams(conv("ffn.expand"),
                              conv("ffn.dw") if ffn_extra_dw else None,
                              conv("ffn.proj"))
    return BlockParams(kind, norm("norm1"), mixer, norm("norm2"), tail)


# ---------------------------------------------------------------------------
# Forward passes.

def _conv(tape: Tape, x: VarId, p: Conv2dParams) -> VarId:
    return ad.conv2d(tape, x, p.w, p.b, p.spec)


def _norm(tape: Tape, x: VarId, p: LayerNormParams) -> VarId:
    return ad.layer_norm(tape, x, p.gain, p.offset, eps=NORM_EPS)


def simple_gate(tape: Tape, x: VarId) -> VarId:
    """Split channels in half, multiply the halves."""
    c = tape.value(x).shape[1]
    a = ad.slice_channels(tape, x, 0, c // 2)
    b = ad.slice_channels(tape, x, c // 2, c)
    return ad.mul(tape, a, b)


def sca(tape: Tape, x: VarId, pw: Conv2dParams) -> VarId:
    """Simplified channel attention: rescale by a pointwise map of the
    global average."""
    pooled = ad.global_avg_pool(tape, x)
    attn = _conv(tape, pooled, pw)
    return ad.mul(tape, x, attn)


def spam_forward(tape: Tape, x: VarId, p: SpamParams) -> VarId:
    h = _conv(tape, x, p.expand)
    h = _conv(tape, h, p.dw)
    h = simple_gate(tape, h)
    h = sca(tape, h, p.sca)
    return _conv(tape, h, p.proj)


def _amplitude_mlp(tape: Tape, amp: VarId, map1: Conv2dParams, map2: Conv2dParams) -> VarId:
    a = _conv(tape, amp, map1)
    a = simple_gate(tape, a)
    a = _conv(tape, a, map2)
    return ad.absolute(tape, a)  # amplitudes must stay non-negative


def fremlp_forward(tape: Tape, x: VarId, p: FreMlpParams) -> VarId:
    h, w = tape.value(x).shape[2:]
    amp, phase = ad.fft_amplitude_phase(tape, x)
    a = _amplitude_mlp(tape, amp, p.map1, p.map2)
    if p.pmap1 is not None:
        dp = _conv(tape, phase, p.pmap1)
        dp = simple_gate(tape, dp)
        dp = _conv(tape, dp, p.pmap2)
        phase = ad.wrap_phase(tape, ad.add(tape, phase, dp))
    return ad.ifft_polar(tape, a, phase, (h, w))


def dispam_forward(tape: Tape, x: VarId, p: DiSpamParams) -> VarId:
    h = _conv(tape, x, p.pw_in)
    acc = None
    for branch in p.branches:
        y = _conv(tape, h, branch)
        acc = y if acc is None else ad.add(tape, acc, y)
    acc = sca(tape, acc, p.sca)
    return _conv(tape, acc, p.pw_out)


def lka_attention(tape: Tape, x: VarId, p: LkaParams) -> VarId:
    h = _conv(tape, x, p.pw_in)
    attn = _conv(tape, h, p.dw5)
    attn = _conv(tape, attn, p.dw7)
    attn = _conv(tape, attn, p.attn)
    h = ad.mul(tape, h, attn)
    h = sca(tape, h, p.sca)
    return _conv(tape, h, p.pw_out)


def gated_ffn_forward(tape: Tape, x: VarId, p: GatedFfnParams) -> VarId:
    h = _conv(tape, x, p.expand)
    if p.dw is not None:
        h = _conv(tape, h, p.dw)
    h = simple_gate(tape, h)
    return _conv(tape, h, p.proj)


def _residual_pair(tape: Tape, z: VarId, p: BlockParams, mixer_fn, tail_fn) -> VarId:
    z1 = ad.add(tape, mixer_fn(tape, _norm(tape, z, p.norm1), p.mixer), z)
    z2 = ad.add(tape, tail_fn(tape, _norm(tape, z1, p.norm2), p.tail), z1)
    return z2


def eblock_forward(tape: Tape, z: VarId, p: BlockParams) -> VarId:
    return _residual_pair(tape, z, p, spam_forward, fremlp_forward)


def phase_eblock_forward(tape: Tape, z: VarId, p: BlockParams) -> VarId:
    return _residual_pair(tape, z, p, spam_forward, fremlp_forward)


def dblock_forward(tape: Tape, z: VarId, p: BlockParams) -> VarId:
    return _residual_pair(tape, z, p, dispam_forward, gated_ffn_forward)


def nafblock_forward(tape: Tape, z: VarId, p: BlockParams) -> VarId:
    return _residual_pair(tape, z, p, spam_forward, gated_ffn_forward)


def lka_forward(tape: Tape, z: VarId, p: BlockParams) -> VarId:
    return _residual_pair(tape, z, p, lka_attention, gated_ffn_forward)


_FORWARDS = {
    "eblock": eblock_forward,
    "eblock_phase": phase_eblock_forward,
    "dblock": dblock_forward,
    "nafblock": nafblock_forward,
    "lka": lka_forward,
}


def block_forward(tape: Tape, z: VarId, p: BlockParams) -> VarId:
    return _FORWARDS[p.kind](tape, z, p)
