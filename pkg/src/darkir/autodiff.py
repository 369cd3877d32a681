"""Reverse-mode automatic differentiation over an eager tape.

Every operation executes its forward kernel immediately, records the result
on the tape and keeps a closure for the backward rule. `backward` walks the
tape once in reverse creation order, which makes gradient accumulation
deterministic: two sweeps over the same tape are bit-identical.

Variables are addressed by opaque `VarId` handles; using a handle with a
different tape raises.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import count as _count

import numpy as np

from . import fft as _fft
from .conv import (
    ConvSpec,
    conv2d_grad_bias,
    conv2d_grad_input,
    conv2d_grad_weight,
    conv2d_raw,
)
from .tensor import ShapeError, Tensor
from .tensor import bilinear_resize as _k_resize
from .tensor import pixel_shuffle as _k_shuffle
from .tensor import pixel_unshuffle as _k_unshuffle

__all__ = [
    "Tape",
    "VarId",
    "GradMap",
    "backward",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "absolute",
    "conv2d",
    "layer_norm",
    "bilinear_resize",
    "pixel_shuffle",
    "pixel_unshuffle",
    "global_avg_pool",
    "slice_channels",
    "concat_channels",
    "abs_sum",
    "sq_sum",
    "shift_replicate",
    "fft_amplitude_phase",
    "ifft_polar",
    "wrap_phase",
]

AMP_EPS = 1e-12  # smoothing inside sqrt(re^2 + im^2 + eps) for the backward pass

_tape_ids = _count()


@dataclass(frozen=True)
class VarId:
    tape_id: int
    index: int


class _Node:
    __slots__ = ("parents", "bwd")

    def __init__(self, parents, bwd):
        self.parents = parents
        self.bwd = bwd


class Tape:
    """Append-only record of forward values and backward closures."""

    def __init__(self):
        self.tape_id = next(_tape_ids)
        self._values: list[Tensor] = []
        self._nodes: list[_Node | None] = []

    def __len__(self) -> int:
        return len(self._values)

    def leaf(self, value: Tensor) -> VarId:
        """Register an input variable (no backward rule of its own)."""
        if not isinstance(value, Tensor):
            raise TypeError(f"leaf wants a Tensor, got {type(value).__name__}")
        return self._push(value, None)

    def value(self, vid: VarId) -> Tensor:
        self._check(vid)
        return self._values[vid.index]

    def _check(self, vid: VarId) -> None:
        if vid.tape_id != self.tape_id:
            raise ValueError(
                f"variable from tape {vid.tape_id} used with tape {self.tape_id}"
            )

    def _push(self, value: Tensor, node: _Node | None) -> VarId:
        self._values.append(value)
        self._nodes.append(node)
        return VarId(self.tape_id, len(self._values) - 1)

    def _record(self, value: Tensor, parents: tuple[VarId, ...], bwd) -> VarId:
        for p in parents:
            self._check(p)
        return self._push(value, _Node(tuple(p.index for p in parents), bwd))


class GradMap:
    """Gradients keyed by VarId; unvisited variables read as zeros."""

    def __init__(self, tape: Tape, grads: dict[int, np.ndarray]):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, vid: VarId) -> Tensor:
        self._tape._check(vid)
        g = self._grads.get(vid.index)
        if g is None:
            primal = self._tape._values[vid.index]
            return Tensor(np.zeros(primal.shape, dtype=primal.dtype))
        return Tensor(g)

    def __contains__(self, vid: VarId) -> bool:
        self._tape._check(vid)
        return vid.index in self._grads


def backward(tape: Tape, loss: VarId) -> GradMap:
    """Accumulate d(loss)/d(var) for every variable reachable from `loss`."""
    tape._check(loss)
    value = tape._values[loss.index]
    if value.shape != (1,):
        raise ShapeError(f"backward needs a scalar loss of shape (1,), got {value.shape}")
    grads: dict[int, np.ndarray] = {
        loss.index: np.ones((1,), dtype=value.dtype)
    }
    for i in range(loss.index, -1, -1):
        g = grads.get(i)
        node = tape._nodes[i]
        if g is None or node is None:
            continue
        for pidx, contrib in zip(node.parents, node.bwd(g)):
            if contrib is None:
                continue
            have = grads.get(pidx)
            grads[pidx] = contrib if have is None else have + contrib
    return GradMap(tape, grads)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(tape: Tape, a: VarId, b: VarId) -> VarId:
    av, bv = tape.value(a), tape.value(b)
    try:
        out = av.data + bv.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot combine {av.shape} with {bv.shape}") from exc
    ash, bsh = av.shape, bv.shape
    return tape._record(
        Tensor(out), (a, b),
        lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)),
    )


def sub(tape: Tape, a: VarId, b: VarId) -> VarId:
    av, bv = tape.value(a), tape.value(b)
    try:
        out = av.data - bv.data
    except ValueError as exc:
        raise ShapeError(f"sub: cannot combine {av.shape} with {bv.shape}") from exc
    ash, bsh = av.shape, bv.shape
    return tape._record(
        Tensor(out), (a, b),
        lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh)),
    )


def mul(tape: Tape, a: VarId, b: VarId) -> VarId:
    av, bv = tape.value(a), tape.value(b)
    try:
        out = av.data * bv.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot combine {av.shape} with {bv.shape}") from exc
    ad, bd = av.data, bv.data
    return tape._record(
        Tensor(out), (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def neg(tape: Tape, a: VarId) -> VarId:
    av = tape.value(a)
    return tape._record(Tensor(-av.data), (a,), lambda g: (-g,))


def scale(tape: Tape, a: VarId, s: float) -> VarId:
    av = tape.value(a)
    sv = av.dtype(s)
    return tape._record(Tensor(av.data * sv), (a,), lambda g: (g * sv,))


def absolute(tape: Tape, a: VarId) -> VarId:
    """|x| with subgradient 0 at 0."""
    av = tape.value(a)
    sign = np.sign(av.data)
    return tape._record(Tensor(np.abs(av.data)), (a,), lambda g: (g * sign,))


def conv2d(tape: Tape, x: VarId, w: VarId, b: VarId | None, spec: ConvSpec) -> VarId:
    xv, wv = tape.value(x), tape.value(w)
    bv = tape.value(b) if b is not None else None
    out = conv2d_raw(xv.data, wv.data, bv.data if bv is not None else None, spec)
    xd, wd = xv.data, wv.data

    if b is None:
        def bwd(g):
            return (
                conv2d_grad_input(g, wd, xd.shape, spec),
                conv2d_grad_weight(g, xd, wd.shape, spec),
            )
        return tape._record(Tensor(out), (x, w), bwd)

    def bwd_b(g):
        return (
            conv2d_grad_input(g, wd, xd.shape, spec),
            conv2d_grad_weight(g, xd, wd.shape, spec),
            conv2d_grad_bias(g),
        )
    return tape._record(Tensor(out), (x, w, b), bwd_b)


def layer_norm(tape: Tape, x: VarId, gain: VarId, offset: VarId, eps: float = 1e-6) -> VarId:
    xv, gv, ov = tape.value(x), tape.value(gain), tape.value(offset)
    if xv.ndim != 4:
        raise ShapeError(f"layer_norm wants rank 4, got shape {xv.shape}")
    c = xv.shape[1]
    if gv.shape != (c,) or ov.shape != (c,):
        raise ShapeError(f"layer_norm: gain {gv.shape} / offset {ov.shape} must be ({c},)")
    xd = xv.data
    mean = xd.mean(axis=1, keepdims=True)
    var = xd.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + xv.dtype(eps))
    y = (xd - mean) * inv
    out = gv.data[None, :, None, None] * y + ov.data[None, :, None, None]
    gd = gv.data

    def bwd(g):
        gy = g * gd[None, :, None, None]
        m1 = gy.mean(axis=1, keepdims=True)
        m2 = (gy * y).mean(axis=1, keepdims=True)
        gx = inv * (gy - m1 - y * m2)
        dgain = (g * y).sum(axis=(0, 2, 3))
        doffset = g.sum(axis=(0, 2, 3))
        return gx.astype(g.dtype), dgain, doffset

    return tape._record(Tensor(out), (x, gain, offset), bwd)


def bilinear_resize(tape: Tape, x: VarId, out_h: int, out_w: int) -> VarId:
    xv = tape.value(x)
    out = _k_resize(xv, out_h, out_w)
    from .tensor import _resize_weights  # weight matrices shared with the kernel

    ry = _resize_weights(xv.shape[2], out_h, xv.dtype)
    rx = _resize_weights(xv.shape[3], out_w, xv.dtype)

    def bwd(g):
        tmp = np.einsum("oh,ncop->nchp", ry, g)
        return (np.ascontiguousarray(np.einsum("pw,nchp->nchw", rx, tmp)),)

    return tape._record(out, (x,), bwd)


def pixel_shuffle(tape: Tape, x: VarId, r: int) -> VarId:
    xv = tape.value(x)
    out = _k_shuffle(xv, r)
    return tape._record(out, (x,), lambda g: (_k_unshuffle(Tensor(g), r).data,))


def pixel_unshuffle(tape: Tape, x: VarId, r: int) -> VarId:
    xv = tape.value(x)
    out = _k_unshuffle(xv, r)
    return tape._record(out, (x,), lambda g: (_k_shuffle(Tensor(g), r).data,))


def global_avg_pool(tape: Tape, x: VarId) -> VarId:
    xv = tape.value(x)
    if xv.ndim != 4:
        raise ShapeError(f"global_avg_pool wants rank 4, got shape {xv.shape}")
    n, c, h, w = xv.shape
    out = xv.data.mean(axis=(2, 3), keepdims=True, dtype=xv.dtype)

    def bwd(g):
        return (np.broadcast_to(g / (h * w), (n, c, h, w)).astype(g.dtype, copy=True),)

    return tape._record(Tensor(out), (x,), bwd)


def slice_channels(tape: Tape, x: VarId, start: int, stop: int) -> VarId:
    xv = tape.value(x)
    if xv.ndim != 4:
        raise ShapeError(f"slice_channels wants rank 4, got shape {xv.shape}")
    c = xv.shape[1]
    if not (0 <= start < stop <= c):
        raise ShapeError(f"slice_channels: [{start}, {stop}) outside channel extent {c}")
    out = np.ascontiguousarray(xv.data[:, start:stop])
    shape = xv.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[:, start:stop] = g
        return (gx,)

    return tape._record(Tensor(out), (x,), bwd)


def concat_channels(tape: Tape, parts) -> VarId:
    parts = tuple(parts)
    vals = [tape.value(p) for p in parts]
    widths = [v.shape[1] for v in vals]
    base = vals[0].shape
    for v in vals[1:]:
        if v.ndim != 4 or v.shape[0] != base[0] or v.shape[2:] != base[2:]:
            raise ShapeError(f"concat_channels: {v.shape} does not align with {base}")
    out = np.concatenate([v.data for v in vals], axis=1)

    def bwd(g):
        pieces = []
        at = 0
        for w in widths:
            pieces.append(np.ascontiguousarray(g[:, at : at + w]))
            at += w
        return tuple(pieces)

    return tape._record(Tensor(out), parts, bwd)


def abs_sum(tape: Tape, x: VarId) -> VarId:
    """L1 reduction to shape (1,); subgradient 0 at 0."""
    xv = tape.value(x)
    out = np.array([np.sum(np.abs(xv.data))], dtype=xv.dtype)
    sign = np.sign(xv.data)
    return tape._record(Tensor(out), (x,), lambda g: (g[0] * sign,))


def sq_sum(tape: Tape, x: VarId) -> VarId:
    """Squared L2 reduction to shape (1,)."""
    xv = tape.value(x)
    out = np.array([np.sum(np.square(xv.data))], dtype=xv.dtype)
    xd = xv.data
    return tape._record(Tensor(out), (x,), lambda g: (g[0] * 2.0 * xd,))


def shift_replicate(tape: Tape, x: VarId, axis: int) -> VarId:
    """y[..., i] = x[..., min(i + 1, L - 1)] along `axis` (2 or 3).

    Paired with a subtraction this realizes forward differences with a
    replicated boundary.
    """
    xv = tape.value(x)
    if xv.ndim != 4 or axis not in (2, 3):
        raise ShapeError(f"shift_replicate wants rank 4 and axis 2 or 3, got {xv.shape}, {axis}")
    length = xv.shape[axis]
    idx = np.minimum(np.arange(length) + 1, length - 1)
    out = np.take(xv.data, idx, axis=axis)

    def bwd(g):
        gx = np.zeros(xv.shape, dtype=g.dtype)
        src = [slice(None)] * 4
        dst = [slice(None)] * 4
        src[axis] = slice(0, length - 1)
        dst[axis] = slice(1, length)
        gx[tuple(dst)] += g[tuple(src)]
        src[axis] = slice(length - 1, length)
        dst[axis] = slice(length - 1, length)
        gx[tuple(dst)] += g[tuple(src)]
        return (gx,)

    return tape._record(Tensor(np.ascontiguousarray(out)), (x,), bwd)


def wrap_phase(tape: Tape, a: VarId) -> VarId:
    """Wrap angles into (-pi, pi]; derivative 1 everywhere (sawtooth)."""
    av = tape.value(a)
    out = np.pi - np.mod(np.pi - av.data.astype(np.float64), 2.0 * np.pi)
    return tape._record(Tensor(out.astype(av.dtype)), (a,), lambda g: (g,))


def fft_amplitude_phase(tape: Tape, x: VarId) -> tuple[VarId, VarId]:
    """Polar half-plane spectrum of (N, C, H, W) as two tape variables.

    Amplitude uses sqrt(re^2 + im^2 + eps) so its backward stays finite at
    zero bins; phase is atan2(im, re) with the same smoothing in the
    denominator of its derivative.
    """
    xv = tape.value(x)
    if xv.ndim != 4:
        raise ShapeError(f"fft_amplitude_phase wants rank 4, got shape {xv.shape}")
    n, c, h, w = xv.shape
    z = _fft.rfft2_core(xv.data)
    re, im = z.real, z.imag
    amp64 = np.sqrt(re * re + im * im + AMP_EPS)
    phase64 = np.arctan2(im, re)
    phase64[phase64 == -np.pi] = np.pi
    from . import profiler

    if h & (h - 1) == 0 and w & (w - 1) == 0:
        profiler.on_fft(n, c, h, w)

    def bwd_amp(g):
        gz = (g.astype(np.float64) / amp64) * (re + 1j * im)
        return (_fft.rfft2_adjoint(gz, (h, w)).astype(g.dtype),)

    def bwd_phase(g):
        denom = re * re + im * im + AMP_EPS
        gz = (g.astype(np.float64) / denom) * (-im + 1j * re)
        return (_fft.rfft2_adjoint(gz, (h, w)).astype(g.dtype),)

    amp_id = tape._record(Tensor(amp64.astype(xv.dtype)), (x,), bwd_amp)
    phase_id = tape._record(Tensor(phase64.astype(xv.dtype)), (x,), bwd_phase)
    return amp_id, phase_id


def ifft_polar(tape: Tape, amp: VarId, phase: VarId, spatial_extent: tuple[int, int]) -> VarId:
    """Inverse transform of amplitude * exp(i * phase) back to NCHW."""
    av, pv = tape.value(amp), tape.value(phase)
    if av.shape != pv.shape:
        raise ShapeError(f"ifft_polar: amplitude {av.shape} and phase {pv.shape} differ")
    h, w = spatial_extent
    if av.ndim != 4 or av.shape[2] != h or av.shape[3] != w // 2 + 1:
        raise ShapeError(
            f"ifft_polar: spectrum shape {av.shape} does not match extent ({h}, {w})"
        )
    a64 = av.data.astype(np.float64)
    p64 = pv.data.astype(np.float64)
    cosp, sinp = np.cos(p64), np.sin(p64)
    z = a64 * (cosp + 1j * sinp)
    out = _fft.irfft2_core(z, (h, w))
    n, c = av.shape[0], av.shape[1]
    from . import profiler

    if h & (h - 1) == 0 and w & (w - 1) == 0:
        profiler.on_fft(n, c, h, w)

    def bwd(g):
        u = _fft.irfft2_adjoint(g.astype(np.float64), (h, w))
        gre, gim = u.real, u.imag
        ga = gre * cosp + gim * sinp
        gp = a64 * (gim * cosp - gre * sinp)
        return ga.astype(g.dtype), gp.astype(g.dtype)

    return tape._record(Tensor(out.astype(av.dtype)), (amp, phase), bwd)
