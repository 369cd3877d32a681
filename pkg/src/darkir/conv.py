"""Direct 2-D convolution (cross-correlation convention) with groups,
stride, dilation and zero padding.

Weights are laid out (C_out, C_in/groups, k, k). The kernel is never
flipped; true convolution, where needed, is obtained by flipping weights at
the call site. Output extent per axis is
floor((H + 2p - d*(k - 1) - 1) / s) + 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import profiler
from .tensor import ShapeError, Tensor

__all__ = ["ConvSpec", "conv2d", "conv_out_extent"]


@dataclass(frozen=True)
class ConvSpec:
    """Static convolution hyperparameters.

    padding=None selects dilation*(kernel_size - 1)//2 per side, which keeps
    the extent for stride 1 and halves it exactly for stride 2 on even input.
    """

    kernel_size: int
    stride: int = 1
    dilation: int = 1
    groups: int = 1
    padding: int | None = None

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ShapeError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.stride < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}")
        if self.dilation < 1:
            raise ShapeError(f"dilation must be positive, got {self.dilation}")
        if self.groups < 1:
            raise ShapeError(f"groups must be positive, got {self.groups}")
        if self.padding is not None and self.padding < 0:
            raise ShapeError(f"padding must be non-negative, got {self.padding}")

    @property
    def pad(self) -> int:
        if self.padding is not None:
            return self.padding
        return self.dilation * (self.kernel_size - 1) // 2


def conv_out_extent(extent: int, spec: ConvSpec) -> int:
    span = spec.dilation * (spec.kernel_size - 1) + 1
    out = (extent + 2 * spec.pad - span) // spec.stride + 1
    if out < 1:
        raise ShapeError(
            f"conv2d: extent {extent} too small for kernel span {span} with padding {spec.pad}"
        )
    return out


def _check_shapes(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, spec: ConvSpec):
    if x.ndim != 4:
        raise ShapeError(f"conv2d input wants rank 4, got shape {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d weight wants rank 4, got shape {w.shape}")
    n, cin, h, wid = x.shape
    cout, cg, kh, kw = w.shape
    if kh != spec.kernel_size or kw != spec.kernel_size:
        raise ShapeError(f"weight taps {kh}x{kw} do not match kernel_size {spec.kernel_size}")
    if cin % spec.groups != 0 or cout % spec.groups != 0:
        raise ShapeError(
            f"channels in={cin} out={cout} not divisible by groups={spec.groups}"
        )
    if cg != cin // spec.groups:
        raise ShapeError(
            f"weight channel extent {cg} does not match C_in/groups = {cin // spec.groups}"
        )
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"bias shape {b.shape} must be ({cout},)")


def _tap_view(xp: np.ndarray, ky: int, kx: int, ho: int, wo: int, spec: ConvSpec):
    ys = ky * spec.dilation
    xs = kx * spec.dilation
    return xp[..., ys : ys + (ho - 1) * spec.stride + 1 : spec.stride,
              xs : xs + (wo - 1) * spec.stride + 1 : spec.stride]


def _pad_input(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _tap_stack(xp: np.ndarray, n: int, cin: int, k: int, ho: int, wo: int,
               spec: ConvSpec) -> np.ndarray:
    """Strided view (N, C, k, k, Ho, Wo) over the padded input."""
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, cin, k, k, ho, wo),
        strides=(sn, sc, sh * spec.dilation, sw * spec.dilation,
                 sh * spec.stride, sw * spec.stride),
        writeable=False,
    )


def _columns(xp: np.ndarray, n: int, cin: int, k: int, ho: int, wo: int,
             spec: ConvSpec) -> np.ndarray:
    """Gather taps: padded (N, C, H', W') -> (N, g, C/g * k * k, Ho * Wo)."""
    g = spec.groups
    taps = _tap_stack(xp, n, cin, k, ho, wo, spec)
    return taps.reshape(n, g, (cin // g) * k * k, ho * wo)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, spec: ConvSpec) -> Tensor:
    """Cross-correlate x (N, C_in, H, W) with w (C_out, C_in/g, k, k)."""
    bd = b.data if b is not None else None
    out = conv2d_raw(x.data, w.data, bd, spec)
    return Tensor(out)


def conv2d_raw(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, spec: ConvSpec) -> np.ndarray:
    _check_shapes(x, w, b, spec)
    n, cin, h, wid = x.shape
    cout = w.shape[0]
    g = spec.groups
    cg_in = cin // g
    cg_out = cout // g
    k = spec.kernel_size
    p = spec.pad
    ho = conv_out_extent(h, spec)
    wo = conv_out_extent(wid, spec)

    xp = _pad_input(x, p)
    cols = _columns(xp, n, cin, k, ho, wo, spec)
    wg = w.reshape(g, cg_out, cg_in * k * k)
    out = np.matmul(wg[None], cols).reshape(n, cout, ho, wo)
    if b is not None:
        out = out + b[None, :, None, None]
    profiler.on_conv(n * ho * wo * cout * cg_in * k * k)
    return np.ascontiguousarray(out)


def conv2d_grad_input(g: np.ndarray, w: np.ndarray, x_shape, spec: ConvSpec) -> np.ndarray:
    """Adjoint of conv2d_raw with respect to the input."""
    n, cin, h, wid = x_shape
    cout = w.shape[0]
    gq = spec.groups
    cg_in = cin // gq
    cg_out = cout // gq
    k = spec.kernel_size
    p = spec.pad
    ho, wo = g.shape[2], g.shape[3]

    gxp = np.zeros((n, cin, h + 2 * p, wid + 2 * p), dtype=g.dtype)
    if cg_in == 1 and cg_out == 1:
        w3 = w.reshape(cin, k, k)
        for ky in range(k):
            for kx in range(k):
                view = _tap_view(gxp, ky, kx, ho, wo, spec)
                view += w3[:, ky, kx][None, :, None, None] * g
    else:
        gg = g.reshape(n, gq, cg_out, ho * wo)
        wg = w.reshape(gq, cg_out, cg_in * k * k)
        gtaps = np.matmul(wg.transpose(0, 2, 1)[None], gg).reshape(
            n, cin, k, k, ho, wo)
        for ky in range(k):
            for kx in range(k):
                view = _tap_view(gxp, ky, kx, ho, wo, spec)
                view += gtaps[:, :, ky, kx]
    gx = gxp
    if p:
        gx = gx[:, :, p:-p, p:-p]
    return np.ascontiguousarray(gx)


def conv2d_grad_weight(g: np.ndarray, x: np.ndarray, w_shape, spec: ConvSpec) -> np.ndarray:
    """Adjoint of conv2d_raw with respect to the weight."""
    n, cin, h, wid = x.shape
    cout, cg_in, k, _ = w_shape
    gq = spec.groups
    cg_out = cout // gq
    p = spec.pad
    ho, wo = g.shape[2], g.shape[3]

    xp = _pad_input(x, p)
    cols = _columns(xp, n, cin, k, ho, wo, spec)
    gg = g.reshape(n, gq, cg_out, ho * wo)
    gw = np.matmul(gg, cols.transpose(0, 1, 3, 2)).sum(axis=0)
    return np.ascontiguousarray(gw.reshape(cout, cg_in, k, k))


def conv2d_grad_bias(g: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(g.sum(axis=(0, 2, 3)))
