"""Training losses (tape-differentiable) and evaluation metrics (plain).

The composite objective is
    total = lp * L_pixel + lpe * L_perceptual + led * L_edge + L_lol
with default weights (1, 1e-2, 50) and the eighth-scale term fixed at
weight 1. No perceptual backbone ships here; callers may plug one in
through the hook argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, VarId
from .tensor import ShapeError, Tensor

__all__ = [
    "LossWeights",
    "l_pixel",
    "l_edge",
    "l_lol",
    "total_loss",
    "psnr",
    "ssim",
]

PSNR_CAP_DB = 100.0
PSNR_MSE_FLOOR = 1e-10
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class LossWeights:
    lambda_pixel: float = 1.0
    lambda_percep: float = 1e-2
    lambda_edge: float = 50.0

    def __post_init__(self):
        for name in ("lambda_pixel", "lambda_percep", "lambda_edge"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def _same_shape(tape: Tape, a: VarId, b: VarId, op: str) -> None:
    sa, sb = tape.value(a).shape, tape.value(b).shape
    if sa != sb:
        raise ShapeError(f"{op}: shapes {sa} and {sb} differ")


def l_pixel(tape: Tape, x: VarId, xhat: VarId) -> VarId:
    """Mean absolute error."""
    _same_shape(tape, x, xhat, "l_pixel")
    diff = ad.sub(tape, x, xhat)
    return ad.scale(tape, ad.abs_sum(tape, diff), 1.0 / tape.value(x).numel)


def l_edge(tape: Tape, x: VarId, xhat: VarId) -> VarId:
    """Mean squared error between forward-difference gradient fields.

    Differences use a replicated boundary (the last row/column contributes
    zero); the mean runs over both difference fields, i.e. over 2 * numel
    values.
    """
    _same_shape(tape, x, xhat, "l_edge")
    n = tape.value(x).numel
    total = None
    for axis in (2, 3):
        dx = ad.sub(tape, ad.shift_replicate(tape, x, axis), x)
        dxh = ad.sub(tape, ad.shift_replicate(tape, xhat, axis), xhat)
        term = ad.sq_sum(tape, ad.sub(tape, dx, dxh))
        total = term if total is None else ad.add(tape, total, term)
    return ad.scale(tape, total, 1.0 / (2 * n))


def l_lol(tape: Tape, x: VarId, xhat_down8: VarId) -> VarId:
    """Mean absolute error between the bilinear 1/8 target and the side
    estimate."""
    xv = tape.value(x)
    dv = tape.value(xhat_down8)
    if xv.ndim != 4 or dv.ndim != 4:
        raise ShapeError("l_lol wants rank-4 inputs")
    h, w = xv.shape[2], xv.shape[3]
    if h % 8 or w % 8:
        raise ShapeError(f"l_lol: extent ({h}, {w}) not divisible by 8")
    if dv.shape != (xv.shape[0], xv.shape[1], h // 8, w // 8):
        raise ShapeError(
            f"l_lol: eighth-scale estimate {dv.shape} does not match target "
            f"{(xv.shape[0], xv.shape[1], h // 8, w // 8)}"
        )
    target = ad.bilinear_resize(tape, x, h // 8, w // 8)
    diff = ad.sub(tape, target, xhat_down8)
    return ad.scale(tape, ad.abs_sum(tape, diff), 1.0 / dv.numel)


def total_loss(tape: Tape, x: VarId, xhat: VarId, xhat_down8: VarId | None,
               weights: LossWeights = LossWeights(),
               perceptual_hook=None) -> tuple[VarId, dict[str, float]]:
    """Weighted objective; returns the scalar VarId plus component values.

    Passing xhat_down8=None drops the eighth-scale term (used by the loss
    ablation); the hook, when given, is called as hook(tape, x, xhat) and
    must return a scalar VarId.
    """
    parts: dict[str, float] = {}
    lp = l_pixel(tape, x, xhat)
    parts["pixel"] = tape.value(lp).item()
    total = ad.scale(tape, lp, weights.lambda_pixel)
    if perceptual_hook is not None and weights.lambda_percep > 0:
        lper = perceptual_hook(tape, x, xhat)
        parts["percep"] = tape.value(lper).item()
        total = ad.add(tape, total, ad.scale(tape, lper, weights.lambda_percep))
    le = l_edge(tape, x, xhat)
    parts["edge"] = tape.value(le).item()
    total = ad.add(tape, total, ad.scale(tape, le, weights.lambda_edge))
    if xhat_down8 is not None:
        ll = l_lol(tape, x, xhat_down8)
        parts["lol"] = tape.value(ll).item()
        total = ad.add(tape, total, ll)
    else:
        parts["lol"] = 0.0
    parts["total"] = tape.value(total).item()
    return total, parts


# ---------------------------------------------------------------------------
# Metrics (plain tensors, no tape).

def psnr(x: Tensor, xhat: Tensor, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), capped at 100 dB for near-zero MSE."""
    if x.shape != xhat.shape:
        raise ShapeError(f"psnr: shapes {x.shape} and {xhat.shape} differ")
    mse = float(np.mean(np.square(x.data.astype(np.float64) - xhat.data.astype(np.float64))))
    if mse < PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Valid-mode correlation of (N, C, H, W) with one 2-D window."""
    k = win.shape[0]
    n, c, h, w = img.shape
    ho, wo = h - k + 1, w - k + 1
    out = np.zeros((n, c, ho, wo), dtype=np.float64)
    for ky in range(k):
        for kx in range(k):
            out += win[ky, kx] * img[:, :, ky : ky + ho, kx : kx + wo]
    return out


def ssim(x: Tensor, xhat: Tensor, peak: float = 1.0) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
    valid-region statistics, averaged over channels and batch."""
    if x.shape != xhat.shape:
        raise ShapeError(f"ssim: shapes {x.shape} and {xhat.shape} differ")
    if x.ndim != 4:
        raise ShapeError(f"ssim wants rank 4, got shape {x.shape}")
    if x.shape[2] < SSIM_WINDOW or x.shape[3] < SSIM_WINDOW:
        raise ShapeError(f"ssim needs extent >= {SSIM_WINDOW}, got {x.shape[2:]}")
    a = x.data.astype(np.float64)
    b = xhat.data.astype(np.float64)
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_a = _windowed_mean(a, win)
    mu_b = _windowed_mean(b, win)
    var_a = _windowed_mean(a * a, win) - mu_a * mu_a
    var_b = _windowed_mean(b * b, win) - mu_b * mu_b
    cov = _windowed_mean(a * b, win) - mu_a * mu_b
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return float(ssim_map.mean())
