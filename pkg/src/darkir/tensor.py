"""Dense tensor container and the shape/normalization kernels built on it.

Image features use NCHW layout: (batch, channels, height, width), row-major.
Every kernel is a pure function returning a fresh tensor; float32 is the
working precision and float64 can be selected for verification runs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "set_verify",
    "verify_enabled",
    "zeros",
    "ones",
    "full",
    "add",
    "mul",
    "scale",
    "global_avg_pool",
    "abs_sum",
    "sq_sum",
    "split_channels",
    "concat_channels",
    "layer_norm",
    "bilinear_resize",
    "pixel_shuffle",
    "pixel_unshuffle",
]

_FLOAT_DTYPES = (np.float32, np.float64)

_verify = False


def set_verify(on: bool) -> None:
    """Toggle boundary checks (finiteness asserts) on every kernel."""
    global _verify
    _verify = bool(on)


def verify_enabled() -> bool:
    return _verify


class ShapeError(ValueError):
    """Extents do not satisfy an operation's contract."""


class Tensor:
    """N-dimensional float array over a contiguous row-major buffer."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES:
                dtype = data.dtype
            else:
                dtype = np.float32
        else:
            dtype = np.dtype(dtype).type
            if dtype not in _FLOAT_DTYPES:
                raise TypeError(f"unsupported dtype {dtype}, want float32 or float64")
        arr = np.ascontiguousarray(data, dtype=dtype)
        if _verify and not np.all(np.isfinite(arr)):
            raise FloatingPointError("tensor contains non-finite values")
        self.data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def numel(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype.type

    def item(self) -> float:
        if self.numel != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data, dtype=dtype)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype))


def full(shape, value: float, dtype=np.float32) -> Tensor:
    return Tensor(np.full(shape, value, dtype=dtype))


def _check_same_dtype(*tensors: Tensor) -> None:
    base = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype is not base:
            raise TypeError(f"mixed dtypes {base.__name__} and {t.dtype.__name__}")


def _check_finite(arr: np.ndarray, what: str) -> None:
    if _verify and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{what} contains non-finite values")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; shapes must match or be broadcast-compatible."""
    _check_same_dtype(a, b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot combine {a.shape} with {b.shape}") from exc
    _check_finite(out, "add output")
    return Tensor(out)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; shapes must match or be broadcast-compatible."""
    _check_same_dtype(a, b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot combine {a.shape} with {b.shape}") from exc
    _check_finite(out, "mul output")
    return Tensor(out)


def scale(a: Tensor, s: float) -> Tensor:
    return Tensor(a.data * a.dtype(s))


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C, 1, 1) spatial mean."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool wants rank 4, got shape {x.shape}")
    return Tensor(x.data.mean(axis=(2, 3), keepdims=True, dtype=x.dtype))


def abs_sum(x: Tensor) -> float:
    """Sum of absolute values (L1)."""
    return float(np.sum(np.abs(x.data), dtype=np.float64))


def sq_sum(x: Tensor) -> float:
    """Sum of squares (squared L2)."""
    return float(np.sum(np.square(x.data, dtype=np.float64)))


def split_channels(x: Tensor, index: int | None = None) -> tuple[Tensor, Tensor]:
    """Split (N, C, H, W) along channels at `index` (default C // 2)."""
    if x.ndim != 4:
        raise ShapeError(f"split_channels wants rank 4, got shape {x.shape}")
    c = x.shape[1]
    if index is None:
        if c % 2 != 0:
            raise ShapeError(f"split_channels: channel extent {c} is odd")
        index = c // 2
    if not 0 < index < c:
        raise ShapeError(f"split_channels: index {index} outside channel extent {c}")
    return Tensor(x.data[:, :index].copy()), Tensor(x.data[:, index:].copy())


def concat_channels(parts) -> Tensor:
    """Concatenate rank-4 tensors along the channel axis."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_channels: empty input")
    _check_same_dtype(*parts)
    base = parts[0].shape
    for p in parts[1:]:
        if p.ndim != 4 or p.shape[0] != base[0] or p.shape[2:] != base[2:]:
            raise ShapeError(f"concat_channels: {p.shape} does not align with {base}")
    return Tensor(np.concatenate([p.data for p in parts], axis=1))


def layer_norm(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the channel axis at each spatial position.

    gain/offset are per-channel, shape (C,). Statistics use the population
    variance over the C values at each (n, h, w).
    """
    if x.ndim != 4:
        raise ShapeError(f"layer_norm wants rank 4, got shape {x.shape}")
    c = x.shape[1]
    if gain.shape != (c,) or offset.shape != (c,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / offset {offset.shape} must be ({c},)"
        )
    _check_same_dtype(x, gain, offset)
    mean = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    y = (x.data - mean) / np.sqrt(var + x.dtype(eps))
    out = gain.data[None, :, None, None] * y + offset.data[None, :, None, None]
    _check_finite(out, "layer_norm output")
    return Tensor(out)


def _resize_weights(n_in: int, n_out: int, dtype) -> np.ndarray:
    """(n_out, n_in) interpolation matrix with half-pixel sample centers."""
    w = np.zeros((n_out, n_in), dtype=np.float64)
    scale_f = n_in / n_out
    for o in range(n_out):
        s = (o + 0.5) * scale_f - 0.5
        if s <= 0.0:
            w[o, 0] = 1.0
        elif s >= n_in - 1:
            w[o, n_in - 1] = 1.0
        else:
            lo = int(np.floor(s))
            frac = s - lo
            w[o, lo] += 1.0 - frac
            w[o, lo + 1] += frac
    return w.astype(dtype)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable bilinear resize of (N, C, H, W) to (N, C, out_h, out_w)."""
    if x.ndim != 4:
        raise ShapeError(f"bilinear_resize wants rank 4, got shape {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize: bad output extent ({out_h}, {out_w})")
    ry = _resize_weights(x.shape[2], out_h, x.dtype)
    rx = _resize_weights(x.shape[3], out_w, x.dtype)
    tmp = np.einsum("oh,nchw->ncow", ry, x.data)
    out = np.einsum("pw,ncow->ncop", rx, tmp)
    return Tensor(np.ascontiguousarray(out, dtype=x.dtype))


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(N, C*r*r, H, W) -> (N, C, H*r, W*r); channel-major sub-pixel order."""
    n, c, h, w = _rank4(x, "pixel_shuffle")
    if r < 1 or c % (r * r) != 0:
        raise ShapeError(f"pixel_shuffle: channels {c} not divisible by r^2={r * r}")
    co = c // (r * r)
    y = x.data.reshape(n, co, r, r, h, w)
    y = y.transpose(0, 1, 4, 2, 5, 3)
    return Tensor(np.ascontiguousarray(y.reshape(n, co, h * r, w * r)))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """(N, C, H*r, W*r) -> (N, C*r*r, H, W); inverse of pixel_shuffle."""
    n, c, h, w = _rank4(x, "pixel_unshuffle")
    if r < 1 or h % r != 0 or w % r != 0:
        raise ShapeError(f"pixel_unshuffle: extents ({h}, {w}) not divisible by {r}")
    ho, wo = h // r, w // r
    y = x.data.reshape(n, c, ho, r, wo, r)
    y = y.transpose(0, 1, 3, 5, 2, 4)
    return Tensor(np.ascontiguousarray(y.reshape(n, c * r * r, ho, wo)))


def _rank4(x: Tensor, op: str) -> tuple[int, int, int, int]:
    if x.ndim != 4:
        raise ShapeError(f"{op} wants rank 4, got shape {x.shape}")
    return x.shape  # type: ignore[return-value]
