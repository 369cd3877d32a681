"""Desk-scale training loop: AdamW with decoupled weight decay, cosine
learning-rate schedule, paired crop/flip/rotation augmentation and CSV
metric logging.

Determinism: all per-step randomness comes from generators seeded with
(seed, step, sample), so two runs with the same config produce identical
logs and identical checkpoint bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .losses import LossWeights, total_loss
from .model import Model
from .tensor import Tensor

__all__ = [
    "TrainConfig",
    "OptimState",
    "NumericalAbort",
    "cosine_lr",
    "adamw_step",
    "augment_pair",
    "train",
    "write_log_csv",
    "LOG_COLUMNS",
]

LOG_COLUMNS = ("step", "lr", "loss_total", "loss_pixel", "loss_edge", "loss_lol")


class NumericalAbort(RuntimeError):
    """Loss or gradient became non-finite; training stopped."""


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 2000
    batch_size: int = 4
    crop_size: int = 64
    lr0: float = 5e-4
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.9
    weight_decay: float = 1e-3
    eps: float = 1e-8
    seed: int = 0
    augment: bool = True
    grad_clip: float = 0.0   # 0 disables clipping
    use_lol: bool = True
    weights: LossWeights = LossWeights()
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    log_every: int = 1

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError(f"total_steps must be non-negative, got {self.total_steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.crop_size < 8 or self.crop_size % 8:
            raise ValueError(f"crop_size must be a positive multiple of 8, got {self.crop_size}")
        if not 0.0 < self.lr0 or not 0.0 <= self.lr_min <= self.lr0:
            raise ValueError(f"need 0 <= lr_min <= lr0, got {self.lr_min}, {self.lr0}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {b}")
        if self.weight_decay < 0 or self.eps <= 0 or self.grad_clip < 0:
            raise ValueError("bad optimizer constants")


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    """lr_min + 0.5 * (lr0 - lr_min) * (1 + cos(pi * step / total_steps))."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if cfg.total_steps == 0:
        return cfg.lr0
    cosine = math.cos(math.pi * step / cfg.total_steps)
    return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + cosine)


class OptimState:
    """First/second moment accumulators plus the shared step count."""

    def __init__(self, params: dict[str, Tensor]):
        self.t = 0
        self.m = {n: np.zeros(p.shape, dtype=np.float64) for n, p in params.items()}
        self.v = {n: np.zeros(p.shape, dtype=np.float64) for n, p in params.items()}


def adamw_step(params: dict[str, Tensor], grads: dict[str, Tensor],
               state: OptimState, lr: float, cfg: TrainConfig,
               decay_names: set[str]) -> None:
    """One AdamW update in place. Weight decay is decoupled and applied only
    to names in `decay_names` (biases and norm parameters stay undecayed)."""
    state.t += 1
    t = state.t
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    clip_scale = 1.0
    if cfg.grad_clip > 0.0:
        total_sq = 0.0
        for n in params:
            g = grads[n].data
            total_sq += float(np.sum(g.astype(np.float64) ** 2))
        norm = math.sqrt(total_sq)
        if norm > cfg.grad_clip:
            clip_scale = cfg.grad_clip / norm
    for n, p in params.items():
        g = grads[n].data.astype(np.float64) * clip_scale
        if not np.all(np.isfinite(g)):
            raise NumericalAbort(f"non-finite gradient for parameter {n!r}")
        pd = p.data.astype(np.float64)
        if n in decay_names and cfg.weight_decay > 0.0:
            pd = pd - lr * cfg.weight_decay * pd
        m = state.m[n]
        v = state.v[n]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        pd = pd - lr * update
        params[n] = Tensor(pd.astype(p.dtype))


def augment_pair(x: np.ndarray, y: np.ndarray, rng: np.random.Generator):
    """Apply one random flip/rotation combination identically to both."""
    if rng.integers(2):
        x, y = x[:, :, ::-1], y[:, :, ::-1]
    if rng.integers(2):
        x, y = x[:, ::-1, :], y[:, ::-1, :]
    k = int(rng.integers(4))
    if k:
        x = np.rot90(x, k, axes=(1, 2))
        y = np.rot90(y, k, axes=(1, 2))
    return np.ascontiguousarray(x), np.ascontiguousarray(y)


def _make_batch(pairs, cfg: TrainConfig, step: int):
    """Assemble (degraded, clean) crops for one step; deterministic."""
    xs, ys = [], []
    for j in range(cfg.batch_size):
        rng = np.random.default_rng([cfg.seed, step, j])
        idx = int(rng.integers(len(pairs)))
        deg, clean = pairs[idx]
        d, c = deg.data, clean.data
        h, w = d.shape[1], d.shape[2]
        if h < cfg.crop_size or w < cfg.crop_size:
            raise ValueError(
                f"image extent ({h}, {w}) smaller than crop_size {cfg.crop_size}"
            )
        y0 = int(rng.integers(h - cfg.crop_size + 1))
        x0 = int(rng.integers(w - cfg.crop_size + 1))
        d = d[:, y0 : y0 + cfg.crop_size, x0 : x0 + cfg.crop_size]
        c = c[:, y0 : y0 + cfg.crop_size, x0 : x0 + cfg.crop_size]
        if cfg.augment:
            d, c = augment_pair(d, c, rng)
        xs.append(d)
        ys.append(c)
    return Tensor(np.stack(xs)), Tensor(np.stack(ys))


def train(model: Model, pairs, cfg: TrainConfig, out_dir=None,
          callbacks=None) -> list[dict]:
    """Optimize the model on (degraded, clean) pairs; returns the metric log.

    With `out_dir` set, checkpoints land there ("latest.dkc" plus periodic
    "step{N}.dkc"). Callbacks, if given, are called with each log record.
    """
    from . import checkpoint as ckpt

    if not pairs:
        raise ValueError("train: empty dataset")
    out = Path(out_dir) if out_dir is not None else None
    state = OptimState(model.params)
    decay = model.decay_names()
    log: list[dict] = []
    for step in range(cfg.total_steps):
        lr = cosine_lr(step, cfg)
        batch_y, batch_x = _make_batch(pairs, cfg, step)
        tape = Tape()
        y_id = tape.leaf(batch_y)
        x_id = tape.leaf(batch_x)
        leaves: dict[str, ad.VarId] = {}
        xhat, down8 = model.forward(tape, y_id, leaf_map=leaves)
        loss, parts = total_loss(tape, x_id, xhat,
                                 down8 if cfg.use_lol else None, cfg.weights)
        if not math.isfinite(parts["total"]):
            raise NumericalAbort(f"non-finite loss at step {step}")
        grad = ad.backward(tape, loss)
        grads = {n: grad[vid] for n, vid in leaves.items()}
        adamw_step(model.params, grads, state, lr, cfg, decay)
        record = {
            "step": step,
            "lr": lr,
            "loss_total": parts["total"],
            "loss_pixel": parts["pixel"],
            "loss_edge": parts["edge"],
            "loss_lol": parts["lol"],
        }
        if step % cfg.log_every == 0 or step == cfg.total_steps - 1:
            log.append(record)
        if callbacks:
            for cb in callbacks:
                cb(record)
        if out is not None and cfg.checkpoint_every > 0 and (step + 1) % cfg.checkpoint_every == 0:
            ckpt.save(model, out / f"step{step + 1}.dkc")
            ckpt.save(model, out / "latest.dkc")
    if out is not None:
        ckpt.save(model, out / "latest.dkc")
    return log


def write_log_csv(log: list[dict], path) -> None:
    lines = [",".join(LOG_COLUMNS)]
    for r in log:
        lines.append(",".join([
            str(r["step"]), f"{r['lr']:.10g}", f"{r['loss_total']:.10g}",
            f"{r['loss_pixel']:.10g}", f"{r['loss_edge']:.10g}", f"{r['loss_lol']:.10g}",
        ]))
    Path(path).write_text("\n".join(lines) + "\n")
