"""Synthetic degradation: blur, darkening and signal-dependent noise.

A clean image x in [0, 1] becomes
    y = clip01( s * (x (*) k)^g + n ),    n ~ N(0, sigma_r^2 + sigma_s * v)
where (*) is true convolution (taps flipped) with replicate padding, s < 1
darkens, the exponent g models a gamma-style tone curve and v is the
pre-noise value, making the noise floor scale with brightness like shot
noise. All randomness is drawn from per-call generators seeded explicitly,
so every pair is reproducible in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ppm import read_ppm, write_ppm
from .tensor import ShapeError, Tensor

__all__ = [
    "BlurKernel",
    "DegradationParams",
    "make_gaussian_kernel",
    "make_motion_kernel",
    "make_delta_kernel",
    "degrade",
    "SynthSpec",
    "synth_dataset",
    "load_pairs",
    "MANIFEST_NAME",
    "MANIFEST_COLUMNS",
    "KERNEL_KINDS",
]

KERNEL_KINDS = ("gaussian", "motion", "mixed", "delta")
MANIFEST_NAME = "manifest.tsv"
MANIFEST_COLUMNS = ("index", "y_path", "x_path", "s", "g", "sigma",
                    "kernel_type", "kernel_seed", "noise_seed")


@dataclass(frozen=True)
class BlurKernel:
    """Normalized non-negative taps with odd extent."""

    taps: np.ndarray
    kind: str

    def __post_init__(self):
        t = self.taps
        if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] % 2 == 0:
            raise ShapeError(f"kernel must be square with odd extent, got {t.shape}")
        if np.any(t < 0):
            raise ValueError("kernel taps must be non-negative")
        if not np.isclose(t.sum(), 1.0, atol=1e-6):
            raise ValueError(f"kernel taps must sum to 1, got {t.sum()}")


def make_delta_kernel(size: int = 1) -> BlurKernel:
    taps = np.zeros((size, size), dtype=np.float64)
    taps[size // 2, size // 2] = 1.0
    return BlurKernel(taps, "delta")


def make_gaussian_kernel(size: int, sigma: float) -> BlurKernel:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    taps = np.outer(g, g)
    return BlurKernel(taps / taps.sum(), "gaussian")


def make_motion_kernel(size: int, steps: int, seed: int) -> BlurKernel:
    """Rasterize a random-walk trajectory with bilinear splatting."""
    if steps < 1:
        raise ValueError(f"steps must be positive, got {steps}")
    rng = np.random.default_rng(seed)
    taps = np.zeros((size, size), dtype=np.float64)
    pos = np.array([(size - 1) / 2.0, (size - 1) / 2.0])
    heading = rng.uniform(0.0, 2.0 * np.pi)
    for _ in range(steps):
        _splat(taps, pos)
        heading += rng.normal(0.0, 0.6)
        step = np.array([np.sin(heading), np.cos(heading)]) * 0.7
        nxt = pos + step
        nxt = np.clip(nxt, 0.0, size - 1)
        pos = nxt
    _splat(taps, pos)
    return BlurKernel(taps / taps.sum(), "motion")


def _splat(taps: np.ndarray, pos: np.ndarray) -> None:
    y, x = pos
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    fy, fx = y - y0, x - x0
    n = taps.shape[0]
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yy, xx = y0 + dy, x0 + dx
            if 0 <= yy < n and 0 <= xx < n:
                taps[yy, xx] += wy * wx


@dataclass(frozen=True)
class DegradationParams:
    s: float          # darkening scale, (0, 1]
    g: float          # tone-curve exponent, >= 1 darkens midtones
    read_sigma: float  # signal-independent noise std
    shot_sigma: float  # signal-dependent variance coefficient
    kernel: BlurKernel
    noise_seed: int

    def __post_init__(self):
        if not 0.0 < self.s <= 1.0:
            raise ValueError(f"s must be in (0, 1], got {self.s}")
        if self.g <= 0.0:
            raise ValueError(f"g must be positive, got {self.g}")
        if self.read_sigma < 0.0 or self.shot_sigma < 0.0:
            raise ValueError("noise coefficients must be non-negative")


def _blur_replicate(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """True convolution per channel with replicate padding."""
    k = taps.shape[0]
    r = k // 2
    flipped = taps[::-1, ::-1]
    xp = np.pad(x, ((0, 0), (r, r), (r, r)), mode="edge")
    h, w = x.shape[1], x.shape[2]
    out = np.zeros_like(x, dtype=np.float64)
    for ky in range(k):
        for kx in range(k):
            out += flipped[ky, kx] * xp[:, ky : ky + h, kx : kx + w]
    return out


def degrade(x: Tensor, p: DegradationParams) -> Tensor:
    """Apply blur, darkening and noise to a clean (3, H, W) image."""
    if x.ndim != 3 or x.shape[0] != 3:
        raise ShapeError(f"degrade wants (3, H, W), got {x.shape}")
    clean = x.data.astype(np.float64)
    if np.any(clean < 0.0) or np.any(clean > 1.0):
        raise ValueError("degrade: input values must lie in [0, 1]")
    v = _blur_replicate(clean, p.kernel.taps)
    v = p.s * np.power(v, p.g)
    if p.read_sigma > 0.0 or p.shot_sigma > 0.0:
        rng = np.random.default_rng(p.noise_seed)
        std = np.sqrt(p.read_sigma**2 + p.shot_sigma * v)
        v = v + rng.standard_normal(v.shape) * std
    return Tensor(np.clip(v, 0.0, 1.0).astype(x.dtype))


@dataclass(frozen=True)
class SynthSpec:
    """Sampling ranges for dataset synthesis; one draw per pair."""

    n: int
    seed: int = 0
    s_range: tuple[float, float] = (0.2, 0.6)
    g_range: tuple[float, float] = (1.2, 2.2)
    read_sigma_range: tuple[float, float] = (0.01, 0.04)
    shot_sigma: float = 0.0
    kernel: str = "gaussian"  # gaussian | motion | mixed | delta
    kernel_size: int = 9
    gaussian_sigma_range: tuple[float, float] = (0.6, 2.0)
    motion_steps_range: tuple[int, int] = (4, 12)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if self.kernel not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel family {self.kernel!r}")
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")


def _pair_params(spec: SynthSpec, index: int) -> tuple[DegradationParams, int]:
    """Deterministic parameters for one pair, independent of other pairs."""
    rng = np.random.default_rng([spec.seed, index])
    s = rng.uniform(*spec.s_range)
    g = rng.uniform(*spec.g_range)
    read_sigma = rng.uniform(*spec.read_sigma_range)
    kind = spec.kernel
    if kind == "mixed":
        kind = "gaussian" if rng.uniform() < 0.5 else "motion"
    kernel_seed = int(rng.integers(0, 2**31 - 1))
    noise_seed = int(rng.integers(0, 2**31 - 1))
    if kind == "delta":
        kernel = make_delta_kernel()
    elif kind == "gaussian":
        krng = np.random.default_rng(kernel_seed)
        sigma = krng.uniform(*spec.gaussian_sigma_range)
        kernel = make_gaussian_kernel(spec.kernel_size, sigma)
    else:
        krng = np.random.default_rng(kernel_seed)
        steps = int(krng.integers(spec.motion_steps_range[0],
                                  spec.motion_steps_range[1] + 1))
        kernel = make_motion_kernel(spec.kernel_size, steps, kernel_seed)
    params = DegradationParams(s=s, g=g, read_sigma=read_sigma,
                               shot_sigma=spec.shot_sigma, kernel=kernel,
                               noise_seed=noise_seed)
    return params, kernel_seed


def synth_dataset(clean_dir, out_dir, spec: SynthSpec) -> list[dict]:
    """Degrade clean PPMs into (input, target) pairs plus a manifest.

    Clean images cycle when n exceeds their count. Returns the manifest
    rows; the tab-separated manifest lands in out_dir alongside the pairs.
    """
    clean_paths = sorted(Path(clean_dir).glob("*.ppm"))
    if not clean_paths:
        raise FileNotFoundError(f"no .ppm images in {clean_dir}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(spec.n):
        src = clean_paths[i % len(clean_paths)]
        clean = read_ppm(src)
        params, kernel_seed = _pair_params(spec, i)
        degraded = degrade(clean, params)
        y_name = f"pair{i:04d}_y.ppm"
        x_name = f"pair{i:04d}_x.ppm"
        write_ppm(out / y_name, degraded)
        write_ppm(out / x_name, clean)
        rows.append({
            "index": i,
            "y_path": y_name,
            "x_path": x_name,
            "s": params.s,
            "g": params.g,
            "sigma": params.read_sigma,
            "kernel_type": params.kernel.kind,
            "kernel_seed": kernel_seed,
            "noise_seed": params.noise_seed,
        })
    lines = ["\t".join(MANIFEST_COLUMNS)]
    for r in rows:
        lines.append("\t".join([
            str(r["index"]), r["y_path"], r["x_path"],
            f"{r['s']:.8f}", f"{r['g']:.8f}", f"{r['sigma']:.8f}",
            r["kernel_type"], str(r["kernel_seed"]), str(r["noise_seed"]),
        ]))
    (out / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    return rows


def load_pairs(dataset_dir) -> list[tuple[Tensor, Tensor]]:
    """Read (degraded, clean) tensor pairs listed in a manifest."""
    root = Path(dataset_dir)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise FileNotFoundError(f"missing {MANIFEST_NAME} in {dataset_dir}")
    pairs = []
    lines = manifest.read_text().strip().splitlines()
    header = tuple(lines[0].split("\t"))
    if header != MANIFEST_COLUMNS:
        raise ValueError(f"unexpected manifest columns {header}")
    for line in lines[1:]:
        cells = line.split("\t")
        pairs.append((read_ppm(root / cells[1]), read_ppm(root / cells[2])))
    return pairs
