"""Trainer tests: schedule, optimizer closed forms, determinism, logging."""

import math

import numpy as np
import pytest

from darkir import checkpoint as ckpt
from darkir import trainer as tr
from darkir.model import DarkIRConfig, build
from darkir.tensor import Tensor
from darkir.trainer import (LOG_COLUMNS, NumericalAbort, OptimState,
                            TrainConfig, adamw_step, augment_pair, cosine_lr,
                            train, write_log_csv)

SMALL = DarkIRConfig(width=4, enc_blocks=(1, 0, 0), mid_blocks=1,
                     dec_blocks=(0, 0, 1))


def make_pairs(count=2, extent=16, seed=0):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        clean = rng.uniform(0.2, 0.9, (3, extent, extent)).astype(np.float32)
        deg = np.clip(clean * 0.5 + rng.normal(0, 0.01, clean.shape), 0, 1)
        pairs.append((Tensor(deg.astype(np.float32)), Tensor(clean)))
    return pairs


def tiny_cfg(**overrides):
    kwargs = dict(total_steps=10, batch_size=2, crop_size=16, lr0=1e-3,
                  augment=False, seed=0, log_every=1)
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# Cosine schedule.

def test_cosine_lr_endpoints_and_midpoint():
    cfg = tiny_cfg(total_steps=100, lr0=1e-3, lr_min=1e-5)
    assert cosine_lr(0, cfg) == 1e-3
    assert cosine_lr(100, cfg) == pytest.approx(1e-5, abs=1e-18)
    assert cosine_lr(50, cfg) == pytest.approx((1e-3 + 1e-5) / 2, rel=1e-12)


def test_cosine_lr_monotone_decreasing():
    cfg = tiny_cfg(total_steps=40)
    lrs = [cosine_lr(s, cfg) for s in range(41)]
    assert all(b < a for a, b in zip(lrs, lrs[1:]))


def test_cosine_lr_validates_step():
    cfg = tiny_cfg(total_steps=10)
    with pytest.raises(ValueError):
        cosine_lr(-1, cfg)
    with pytest.raises(ValueError):
        cosine_lr(11, cfg)


def test_cosine_lr_zero_total_steps():
    assert cosine_lr(0, tiny_cfg(total_steps=0)) == 1e-3


# ---------------------------------------------------------------------------
# AdamW closed form at t=1:
#   m_hat = g, v_hat = g^2, update = g / (|g| + eps)
#   p' = p * (1 - lr*wd  if decayed) - lr * update

def test_adamw_first_step_closed_form():
    cfg = tiny_cfg(weight_decay=1e-2, eps=1e-8)
    lr = 3e-4
    rng = np.random.default_rng(0)
    p0 = rng.standard_normal((3, 4)).astype(np.float64)
    g0 = rng.standard_normal((3, 4)).astype(np.float64)
    params = {"layer.w": Tensor(p0.copy()), "layer.b": Tensor(p0.copy())}
    grads = {"layer.w": Tensor(g0.copy()), "layer.b": Tensor(g0.copy())}
    state = OptimState(params)
    adamw_step(params, grads, state, lr, cfg, decay_names={"layer.w"})

    update = g0 / (np.abs(g0) + cfg.eps)
    want_w = p0 * (1 - lr * cfg.weight_decay) - lr * update
    want_b = p0 - lr * update
    np.testing.assert_allclose(params["layer.w"].data, want_w, rtol=1e-12)
    np.testing.assert_allclose(params["layer.b"].data, want_b, rtol=1e-12)
    assert state.t == 1


def test_adamw_two_steps_match_reference():
    # Independent reference implementation of two full updates.
    cfg = tiny_cfg(weight_decay=0.0, beta1=0.9, beta2=0.99, eps=1e-8)
    lr = 1e-3
    rng = np.random.default_rng(1)
    p = rng.standard_normal(5).astype(np.float64)
    gs = [rng.standard_normal(5) for _ in range(2)]

    params = {"p.w": Tensor(p.copy())}
    state = OptimState(params)
    for g in gs:
        adamw_step(params, {"p.w": Tensor(g.copy())}, state, lr, cfg, set())

    m = np.zeros(5)
    v = np.zeros(5)
    ref = p.copy()
    for t, g in enumerate(gs, start=1):
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        mh = m / (1 - cfg.beta1**t)
        vh = v / (1 - cfg.beta2**t)
        ref -= lr * mh / (np.sqrt(vh) + cfg.eps)
    np.testing.assert_allclose(params["p.w"].data, ref, rtol=1e-12)


def test_adamw_decay_without_gradient_shrinks_only_weights():
    cfg = tiny_cfg(weight_decay=0.1)
    lr = 1e-2
    params = {"a.w": Tensor(np.ones(4)), "a.b": Tensor(np.ones(4))}
    grads = {n: Tensor(np.zeros(4)) for n in params}
    state = OptimState(params)
    adamw_step(params, grads, state, lr, cfg, decay_names={"a.w"})
    np.testing.assert_allclose(params["a.w"].data, np.full(4, 1 - lr * 0.1),
                               rtol=1e-12)
    np.testing.assert_array_equal(params["a.b"].data, np.ones(4))


def test_adamw_grad_clip_rescales_global_norm():
    clip = 0.5
    cfg = tiny_cfg(weight_decay=0.0, grad_clip=clip, eps=1e-8)
    lr = 1e-3
    g1 = np.array([3.0, 4.0])  # norm 5 over both params -> sqrt(9+16+0)=5
    params = {"x.w": Tensor(np.zeros(2)), "y.w": Tensor(np.zeros(1))}
    grads = {"x.w": Tensor(g1.copy()), "y.w": Tensor(np.zeros(1))}
    state = OptimState(params)
    adamw_step(params, grads, state, lr, cfg, set())
    scaled = g1 * (clip / 5.0)
    want = -lr * scaled / (np.abs(scaled) + cfg.eps)
    np.testing.assert_allclose(params["x.w"].data, want, rtol=1e-12)


def test_adamw_clip_noop_when_under_threshold():
    cfg_clip = tiny_cfg(weight_decay=0.0, grad_clip=100.0)
    cfg_free = tiny_cfg(weight_decay=0.0, grad_clip=0.0)
    g = np.array([1.0, -2.0])
    outs = []
    for cfg in (cfg_clip, cfg_free):
        params = {"x.w": Tensor(np.zeros(2))}
        state = OptimState(params)
        adamw_step(params, {"x.w": Tensor(g.copy())}, state, 1e-3, cfg, set())
        outs.append(params["x.w"].data)
    np.testing.assert_array_equal(outs[0], outs[1])


def test_adamw_aborts_on_nonfinite_gradient():
    params = {"x.w": Tensor(np.zeros(2))}
    grads = {"x.w": Tensor(np.array([1.0, np.nan]))}
    with pytest.raises(NumericalAbort, match="x.w"):
        adamw_step(params, grads, OptimState(params), 1e-3, tiny_cfg(), set())


# ---------------------------------------------------------------------------
# Augmentation and batching.

def dihedral_variants(img):
    outs = []
    for flip_h in (False, True):
        base = img[:, :, ::-1] if flip_h else img
        for k in range(4):
            outs.append(np.rot90(base, k, axes=(1, 2)))
    return outs


def test_augment_applies_same_transform_to_both(rng):
    x = rng.standard_normal((3, 8, 8))
    xa, ya = augment_pair(x, x.copy(), np.random.default_rng(5))
    np.testing.assert_array_equal(xa, ya)
    assert xa.flags["C_CONTIGUOUS"]


def test_augment_output_is_a_dihedral_image(rng):
    x = rng.standard_normal((3, 8, 8))
    variants = dihedral_variants(x)
    for seed in range(12):
        xa, _ = augment_pair(x, x.copy(), np.random.default_rng(seed))
        assert any(np.array_equal(xa, v) for v in variants)


def test_make_batch_deterministic_and_cropped():
    pairs = make_pairs(count=3, extent=24)
    cfg = tiny_cfg(crop_size=16, batch_size=3)
    y1, x1 = tr._make_batch(pairs, cfg, step=4)
    y2, x2 = tr._make_batch(pairs, cfg, step=4)
    np.testing.assert_array_equal(y1.data, y2.data)
    np.testing.assert_array_equal(x1.data, x2.data)
    assert y1.shape == (3, 3, 16, 16)
    y3, _ = tr._make_batch(pairs, cfg, step=5)
    assert not np.array_equal(y1.data, y3.data)


def test_make_batch_rejects_small_images():
    pairs = make_pairs(count=1, extent=8)
    with pytest.raises(ValueError, match="crop_size"):
        tr._make_batch(pairs, tiny_cfg(crop_size=16), step=0)


# ---------------------------------------------------------------------------
# Training loop.

def test_train_zero_steps_is_a_noop(tmp_path):
    model = build(SMALL, seed=0)
    before = {n: t.data.copy() for n, t in model.params.items()}
    log = train(model, make_pairs(), tiny_cfg(total_steps=0), out_dir=tmp_path)
    assert log == []
    for n in before:
        np.testing.assert_array_equal(model.params[n].data, before[n])
    assert (tmp_path / "latest.dkc").exists()


def test_train_empty_dataset_rejected():
    with pytest.raises(ValueError, match="empty"):
        train(build(SMALL, seed=0), [], tiny_cfg())


def test_train_loss_decreases():
    model = build(SMALL, seed=0)
    log = train(model, make_pairs(), tiny_cfg(total_steps=40, lr0=2e-3))
    first = np.mean([r["loss_total"] for r in log[:5]])
    last = np.mean([r["loss_total"] for r in log[-5:]])
    assert last < first


def test_train_same_seed_is_bit_deterministic():
    logs, params = [], []
    for _ in range(2):
        model = build(SMALL, seed=3)
        logs.append(train(model, make_pairs(), tiny_cfg(total_steps=8)))
        params.append(model.params)
    assert logs[0] == logs[1]
    for n in params[0]:
        np.testing.assert_array_equal(params[0][n].data, params[1][n].data)


def test_train_different_seed_diverges():
    logs = []
    for seed in (0, 1):
        model = build(SMALL, seed=3)
        logs.append(train(model, make_pairs(), tiny_cfg(total_steps=4, seed=seed)))
    assert logs[0] != logs[1]


def test_train_log_every_and_callbacks():
    model = build(SMALL, seed=0)
    seen = []
    log = train(model, make_pairs(), tiny_cfg(total_steps=12, log_every=5),
                callbacks=[lambda rec: seen.append(rec["step"])])
    assert [r["step"] for r in log] == [0, 5, 10, 11]
    assert seen == list(range(12))  # callbacks fire every step
    assert set(LOG_COLUMNS) == set(log[0].keys())


def test_train_periodic_checkpoints(tmp_path):
    model = build(SMALL, seed=0)
    train(model, make_pairs(), tiny_cfg(total_steps=8, checkpoint_every=4),
          out_dir=tmp_path)
    assert (tmp_path / "step4.dkc").exists()
    assert (tmp_path / "step8.dkc").exists()
    assert ((tmp_path / "latest.dkc").read_bytes()
            == (tmp_path / "step8.dkc").read_bytes())
    loaded = ckpt.load(tmp_path / "latest.dkc")
    for n in model.params:
        np.testing.assert_array_equal(loaded.params[n].data,
                                      model.params[n].data)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_aborts_on_divergence():
    model = build(SMALL, seed=0)
    with pytest.raises(NumericalAbort):
        train(model, make_pairs(), tiny_cfg(total_steps=200, lr0=1e8,
                                            lr_min=1e7))


def test_train_config_validation():
    bad = [
        dict(total_steps=-1),
        dict(batch_size=0),
        dict(crop_size=12),
        dict(crop_size=0),
        dict(lr0=0.0),
        dict(lr_min=1.0, lr0=0.5),
        dict(beta1=1.0),
        dict(beta2=-0.1),
        dict(weight_decay=-1e-3),
        dict(eps=0.0),
        dict(grad_clip=-1.0),
    ]
    for kwargs in bad:
        with pytest.raises(ValueError):
            tiny_cfg(**kwargs)


def test_write_log_csv_round_trips(tmp_path):
    model = build(SMALL, seed=0)
    log = train(model, make_pairs(), tiny_cfg(total_steps=3))
    path = tmp_path / "log.csv"
    write_log_csv(log, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == ",".join(LOG_COLUMNS)
    assert len(lines) == 1 + len(log)
    cells = lines[1].split(",")
    assert int(cells[0]) == log[0]["step"]
    assert float(cells[2]) == pytest.approx(log[0]["loss_total"], rel=1e-9)
    assert math.isfinite(float(cells[5]))
