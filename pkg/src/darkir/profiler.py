"""Runtime multiply counter for MAC verification.

While a counter is active, the convolution and FFT kernels report how many
scalar multiplies they execute. Only those two kernel families count toward
MACs; elementwise math, gating, pooling and normalization are excluded by
convention. FFT work is booked with the documented 5*H*W*log2(H*W) real
multiplies per channel per transform so that analytic and measured totals
can agree exactly.
"""

from __future__ import annotations

from contextlib import contextmanager

__all__ = ["MacCounter", "instrumented", "active_counter"]


class MacCounter:
    """Tallies conv and FFT multiplies during instrumented execution."""

    def __init__(self, include_fft: bool = True):
        self.include_fft = include_fft
        self.conv_macs = 0
        self.fft_macs = 0

    @property
    def total(self) -> int:
        if self.include_fft:
            return self.conv_macs + self.fft_macs
        return self.conv_macs


_active: MacCounter | None = None


def active_counter() -> MacCounter | None:
    return _active


@contextmanager
def instrumented(include_fft: bool = True):
    """Activate a fresh counter for the duration of the block."""
    global _active
    if _active is not None:
        raise RuntimeError("nested instrumented() blocks are not supported")
    counter = MacCounter(include_fft=include_fft)
    _active = counter
    try:
        yield counter
    finally:
        _active = None


def on_conv(multiplies: int) -> None:
    if _active is not None:
        _active.conv_macs += multiplies


def fft_transform_macs(h: int, w: int) -> int:
    """Documented per-channel cost of one 2-D transform over an HxW plane."""
    n = h * w
    log2n = n.bit_length() - 1
    if (1 << log2n) != n:
        raise ValueError(f"FFT MAC convention needs power-of-two area, got {h}x{w}")
    return 5 * n * log2n


def on_fft(batch: int, channels: int, h: int, w: int) -> None:
    if _active is not None:
        _active.fft_macs += batch * channels * fft_transform_macs(h, w)
