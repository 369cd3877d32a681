"""2-D real FFT with amplitude/phase decomposition.

The forward transform is unnormalized (the DC bin of a constant c over an
HxW plane is c*H*W); the inverse carries the 1/(H*W) factor. Spectra of
real input are Hermitian, so only the half plane of W//2 + 1 columns is
stored. Power-of-two extents take the radix-2 path; any other extent falls
back to the direct DFT, which keeps verification at odd sizes possible.

Internal arithmetic runs in complex128 regardless of tensor precision and
results are cast back, so float32 round trips stay well inside tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import profiler
from .tensor import ShapeError, Tensor

__all__ = ["Spectrum", "fft2_real", "ifft2_real", "recombine"]


@dataclass
class Spectrum:
    """Half-plane polar spectrum of a real NCHW tensor.

    amplitude/phase have shape (N, C, H, W//2 + 1); spatial_extent records
    the (H, W) of the originating signal so the inverse knows the full width.
    Amplitudes are non-negative; phases lie in (-pi, pi].
    """

    amplitude: Tensor
    phase: Tensor
    spatial_extent: tuple[int, int]


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


# (n, sign) -> (bit-reverse indices, per-stage twiddles); tiny and reused a lot
_PLAN_CACHE: dict[tuple[int, float], tuple[np.ndarray, list[np.ndarray]]] = {}


def _plan(n: int, sign: float):
    key = (n, sign)
    plan = _PLAN_CACHE.get(key)
    if plan is None:
        stages = []
        m = 2
        while m <= n:
            half = m // 2
            stages.append(np.exp(sign * 2j * np.pi * np.arange(half) / m))
            m *= 2
        plan = (_bit_reverse_indices(n), stages)
        _PLAN_CACHE[key] = plan
    return plan


def _fft_pow2_last(a: np.ndarray, sign: float) -> np.ndarray:
    """Radix-2 iterative FFT along the last axis; sign=-1 forward, +1 inverse
    (unscaled)."""
    n = a.shape[-1]
    if n == 1:
        return a.astype(np.complex128, copy=True)
    rev, stages = _plan(n, sign)
    out = np.ascontiguousarray(a, dtype=np.complex128)[..., rev]
    scratch = np.empty(out.shape[:-1] + (n // 2,), dtype=np.complex128)
    m = 2
    for tw in stages:
        half = m // 2
        view = out.reshape(out.shape[:-1] + (n // m, m))
        top, bot = view[..., :half], view[..., half:]
        s = scratch.reshape(view.shape[:-1] + (half,))
        np.multiply(bot, tw, out=s)
        np.subtract(top, s, out=bot)
        top += s
        m *= 2
    return out


def _dft_last(a: np.ndarray, sign: float) -> np.ndarray:
    """Direct O(n^2) DFT along the last axis (fallback for any extent)."""
    n = a.shape[-1]
    j = np.arange(n)
    mat = np.exp(sign * 2j * np.pi * np.outer(j, j) / n)
    return np.einsum("...j,jk->...k", a.astype(np.complex128), mat)


def _transform_last(a: np.ndarray, sign: float) -> np.ndarray:
    if _is_pow2(a.shape[-1]):
        return _fft_pow2_last(a, sign)
    return _dft_last(a, sign)


def _fft2(a: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2-D transform over the last two axes."""
    out = _transform_last(a, -1.0)
    out = np.swapaxes(_transform_last(np.swapaxes(out, -1, -2), -1.0), -1, -2)
    return out


def _ifft2(a: np.ndarray) -> np.ndarray:
    """Inverse 2-D transform over the last two axes including 1/(H*W)."""
    out = _transform_last(a, 1.0)
    out = np.swapaxes(_transform_last(np.swapaxes(out, -1, -2), 1.0), -1, -2)
    out /= a.shape[-1] * a.shape[-2]
    return out


def rfft2_core(x: np.ndarray) -> np.ndarray:
    """Complex half-plane spectrum (..., H, W//2 + 1) of real input."""
    w = x.shape[-1]
    full = _fft2(x.astype(np.complex128))
    return np.ascontiguousarray(full[..., : w // 2 + 1])


def hermitian_extend(z: np.ndarray, w: int) -> np.ndarray:
    """Rebuild the full-width spectrum from the stored half plane."""
    h = z.shape[-2]
    wh = z.shape[-1]
    if wh != w // 2 + 1:
        raise ShapeError(f"half plane width {wh} does not match extent {w}")
    shape = z.shape[:-1] + (w,)
    full = np.zeros(shape, dtype=np.complex128)
    full[..., :wh] = z
    ncols = w - wh  # mirrored columns wh..w-1 come from columns 1..ncols
    if ncols > 0:
        rows = (h - np.arange(h)) % h
        src = z[..., rows, :][..., 1 : 1 + ncols]
        full[..., wh:] = np.conj(src[..., ::-1])
    return full


def irfft2_core(z: np.ndarray, extent: tuple[int, int]) -> np.ndarray:
    """Real signal from a half-plane spectrum; projects onto the real part."""
    h, w = extent
    if z.shape[-2] != h:
        raise ShapeError(f"spectrum height {z.shape[-2]} does not match extent {h}")
    full = hermitian_extend(z, w)
    return np.ascontiguousarray(_ifft2(full).real)


def rfft2_adjoint(g: np.ndarray, extent: tuple[int, int]) -> np.ndarray:
    """Adjoint of rfft2_core: complex half-plane cotangent -> real gradient.

    d/dx sum Re(conj(g) * rfft2(x)) over half-plane bins only, no Hermitian
    doubling: zero-pad g to full width and apply the unnormalized inverse.
    """
    h, w = extent
    shape = g.shape[:-1] + (w,)
    pad = np.zeros(shape, dtype=np.complex128)
    pad[..., : g.shape[-1]] = g
    return np.ascontiguousarray((_ifft2(pad) * (h * w)).real)


def irfft2_adjoint(g: np.ndarray, extent: tuple[int, int]) -> np.ndarray:
    """Adjoint of irfft2_core: real cotangent -> complex half-plane gradient.

    Interior columns appear twice in the Hermitian extension, so their
    adjoint entries are doubled; DC (and Nyquist for even W) stay single.
    """
    h, w = extent
    wh = w // 2 + 1
    u = _fft2(g.astype(np.complex128)) / (h * w)
    u = u[..., :wh].copy()
    hi = w // 2 if w % 2 == 0 else wh
    if hi > 1:
        u[..., 1:hi] *= 2.0
    return np.ascontiguousarray(u)


def _cast_real(arr: np.ndarray, dtype) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=dtype)


def fft2_real(x: Tensor) -> Spectrum:
    """Forward transform of (N, C, H, W) into a polar half-plane spectrum."""
    if x.ndim != 4:
        raise ShapeError(f"fft2_real wants rank 4, got shape {x.shape}")
    n, c, h, w = x.shape
    z = rfft2_core(x.data)
    amp = np.abs(z)
    phase = np.arctan2(z.imag, z.real)
    phase[phase == -np.pi] = np.pi  # keep phases in (-pi, pi]
    if _is_pow2(h) and _is_pow2(w):
        profiler.on_fft(n, c, h, w)
    return Spectrum(
        amplitude=Tensor(_cast_real(amp, x.dtype)),
        phase=Tensor(_cast_real(phase, x.dtype)),
        spatial_extent=(h, w),
    )


def ifft2_real(s: Spectrum) -> Tensor:
    """Inverse transform of a polar half-plane spectrum back to NCHW."""
    amp = s.amplitude.data
    phase = s.phase.data
    if amp.shape != phase.shape:
        raise ShapeError(f"amplitude {amp.shape} and phase {phase.shape} differ")
    h, w = s.spatial_extent
    z = amp.astype(np.complex128) * np.exp(1j * phase.astype(np.float64))
    out = irfft2_core(z, (h, w))
    n, c = amp.shape[0], amp.shape[1]
    if _is_pow2(h) and _is_pow2(w):
        profiler.on_fft(n, c, h, w)
    return Tensor(_cast_real(out, s.amplitude.dtype))


def recombine(amplitude: Tensor, phase: Tensor, spatial_extent: tuple[int, int]) -> Spectrum:
    """Package edited amplitude with (typically original) phase.

    Amplitudes must be non-negative; phases must lie in (-pi, pi].
    """
    if amplitude.shape != phase.shape:
        raise ShapeError(f"amplitude {amplitude.shape} and phase {phase.shape} differ")
    if amplitude.ndim != 4:
        raise ShapeError(f"recombine wants rank 4, got shape {amplitude.shape}")
    h, w = spatial_extent
    if amplitude.shape[2] != h or amplitude.shape[3] != w // 2 + 1:
        raise ShapeError(
            f"spectrum shape {amplitude.shape} does not match extent ({h}, {w})"
        )
    if np.any(amplitude.data < 0):
        raise ValueError("recombine: negative amplitude")
    if np.any(phase.data > np.pi) or np.any(phase.data <= -np.pi):
        raise ValueError("recombine: phase outside (-pi, pi]")
    return Spectrum(amplitude=amplitude, phase=phase, spatial_extent=(h, w))
