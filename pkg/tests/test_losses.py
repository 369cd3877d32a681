"""Loss and metric tests against closed forms and numpy oracles."""

import numpy as np
import pytest

from darkir import autodiff as ad
from darkir import losses as ls
from darkir.autodiff import Tape
from darkir.losses import LossWeights, l_edge, l_lol, l_pixel, psnr, ssim, total_loss
from darkir.tensor import ShapeError, Tensor, bilinear_resize


def on_tape(*arrays):
    tape = Tape()
    return (tape, *[tape.leaf(Tensor(a)) for a in arrays])


def scalar(tape, vid):
    return float(tape.value(vid).data[0])


# ---------------------------------------------------------------------------
# Component oracles.

def test_l_pixel_is_mean_absolute_error(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    y = rng.standard_normal((2, 3, 8, 8))
    tape, xv, yv = on_tape(x, y)
    assert scalar(tape, l_pixel(tape, xv, yv)) == pytest.approx(
        np.abs(x - y).mean(), rel=1e-12)


def test_l_pixel_zero_on_identical(rng):
    x = rng.standard_normal((1, 3, 8, 8))
    tape, a, b = on_tape(x, x.copy())
    assert scalar(tape, l_pixel(tape, a, b)) == 0.0


def edge_oracle(x, y):
    def grads(img):
        gy = np.zeros_like(img)
        gx = np.zeros_like(img)
        gy[:, :, :-1] = img[:, :, 1:] - img[:, :, :-1]
        gx[:, :, :, :-1] = img[:, :, :, 1:] - img[:, :, :, :-1]
        return gy, gx
    ay, ax_ = grads(x)
    by, bx = grads(y)
    return (np.square(ay - by).sum() + np.square(ax_ - bx).sum()) / (2 * x.size)


def test_l_edge_matches_forward_difference_oracle(rng):
    x = rng.standard_normal((2, 3, 7, 9))
    y = rng.standard_normal((2, 3, 7, 9))
    tape, xv, yv = on_tape(x, y)
    assert scalar(tape, l_edge(tape, xv, yv)) == pytest.approx(
        edge_oracle(x, y), rel=1e-12)


def test_l_edge_ignores_constant_offset(rng):
    # Forward differences kill any constant shift between the two images.
    x = rng.standard_normal((1, 3, 8, 8))
    tape, xv, yv = on_tape(x, x + 0.7)
    assert scalar(tape, l_edge(tape, xv, yv)) == pytest.approx(0.0, abs=1e-15)


def test_l_lol_compares_against_bilinear_eighth(rng):
    x = rng.uniform(0, 1, (2, 3, 16, 24))
    d8 = rng.uniform(0, 1, (2, 3, 2, 3))
    tape, xv, dv = on_tape(x, d8)
    target = bilinear_resize(Tensor(x), 2, 3).data
    assert scalar(tape, l_lol(tape, xv, dv)) == pytest.approx(
        np.abs(target - d8).mean(), rel=1e-12)


def test_l_lol_validates_extents(rng):
    x = rng.uniform(0, 1, (1, 3, 16, 16))
    good = rng.uniform(0, 1, (1, 3, 2, 2))
    tape, xv, gv = on_tape(x, good)
    l_lol(tape, xv, gv)  # sanity: correct extent accepted
    bad = rng.uniform(0, 1, (1, 3, 3, 2))
    tape, xv, bv = on_tape(x, bad)
    with pytest.raises(ShapeError):
        l_lol(tape, xv, bv)
    odd = rng.uniform(0, 1, (1, 3, 12, 16))
    tape, ov, gv = on_tape(odd, good)
    with pytest.raises(ShapeError, match="divisible by 8"):
        l_lol(tape, ov, gv)


def test_losses_reject_shape_mismatch(rng):
    a = rng.standard_normal((1, 3, 8, 8))
    b = rng.standard_normal((1, 3, 8, 9))
    for fn in (l_pixel, l_edge):
        tape, av, bv = on_tape(a, b)
        with pytest.raises(ShapeError):
            fn(tape, av, bv)


# ---------------------------------------------------------------------------
# Composite arithmetic: total = 1*pixel + 1e-2*percep + 50*edge + 1*lol.

def test_total_loss_weighted_sum_of_components(rng):
    x = rng.uniform(0, 1, (1, 3, 16, 16))
    xh = rng.uniform(0, 1, (1, 3, 16, 16))
    d8 = rng.uniform(0, 1, (1, 3, 2, 2))

    hook_value = 0.321

    def hook(tape, xv, xhv):
        return tape.leaf(Tensor(np.array([hook_value])))

    tape, xv, xhv, dv = on_tape(x, xh, d8)
    total, parts = total_loss(tape, xv, xhv, dv, perceptual_hook=hook)
    expected = (1.0 * parts["pixel"] + 1e-2 * parts["percep"]
                + 50.0 * parts["edge"] + parts["lol"])
    assert scalar(tape, total) == pytest.approx(expected, abs=1e-12)
    assert parts["percep"] == hook_value
    assert parts["total"] == scalar(tape, total)


def test_total_loss_custom_weights_and_no_down8(rng):
    x = rng.uniform(0, 1, (1, 3, 16, 16))
    xh = rng.uniform(0, 1, (1, 3, 16, 16))
    w = LossWeights(lambda_pixel=2.0, lambda_percep=0.0, lambda_edge=3.0)
    tape, xv, xhv = on_tape(x, xh)
    total, parts = total_loss(tape, xv, xhv, None, weights=w)
    assert parts["lol"] == 0.0
    assert scalar(tape, total) == pytest.approx(
        2.0 * parts["pixel"] + 3.0 * parts["edge"], abs=1e-12)


def test_total_loss_gradient_flows_to_prediction(rng):
    x = rng.uniform(0, 1, (1, 3, 16, 16))
    xh = rng.uniform(0, 1, (1, 3, 16, 16))
    d8 = rng.uniform(0, 1, (1, 3, 2, 2))
    tape, xv, xhv, dv = on_tape(x, xh, d8)
    total, _ = total_loss(tape, xv, xhv, dv)
    grads = ad.backward(tape, total)
    assert np.any(grads[xhv].data != 0)
    assert np.any(grads[dv].data != 0)


def test_loss_weights_reject_negative():
    with pytest.raises(ValueError):
        LossWeights(lambda_edge=-1.0)


# ---------------------------------------------------------------------------
# PSNR.

def test_psnr_uniform_difference_is_exact():
    # MSE of a constant 0.1 offset is 1e-2, so PSNR = 10*log10(1/1e-2) = 20.
    x = Tensor(np.full((1, 3, 8, 8), 0.5))
    y = Tensor(np.full((1, 3, 8, 8), 0.6))
    assert psnr(x, y) == pytest.approx(20.0, abs=1e-12)


def test_psnr_matches_definition(rng):
    a = rng.uniform(0, 1, (2, 3, 8, 8))
    b = rng.uniform(0, 1, (2, 3, 8, 8))
    mse = np.mean((a - b) ** 2)
    assert psnr(Tensor(a), Tensor(b)) == pytest.approx(
        10 * np.log10(1.0 / mse), rel=1e-12)
    assert psnr(Tensor(a), Tensor(b), peak=2.0) == pytest.approx(
        10 * np.log10(4.0 / mse), rel=1e-12)


def test_psnr_caps_at_100db(rng):
    x = rng.uniform(0, 1, (1, 3, 8, 8))
    assert psnr(Tensor(x), Tensor(x.copy())) == 100.0
    assert psnr(Tensor(x), Tensor(x + 1e-9)) == 100.0


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(Tensor(np.zeros((1, 3, 8, 8))), Tensor(np.zeros((1, 3, 8, 9))))


# ---------------------------------------------------------------------------
# SSIM.

def ssim_oracle(a, b, peak=1.0):
    win = ls._gaussian_window(11, 1.5)
    k = 11
    n, c, h, w = a.shape
    ho, wo = h - k + 1, w - k + 1
    vals = []
    for i in range(n):
        for j in range(c):
            for y in range(ho):
                for x in range(wo):
                    pa = a[i, j, y : y + k, x : x + k]
                    pb = b[i, j, y : y + k, x : x + k]
                    mu_a = (win * pa).sum()
                    mu_b = (win * pb).sum()
                    va = (win * pa * pa).sum() - mu_a**2
                    vb = (win * pb * pb).sum() - mu_b**2
                    cov = (win * pa * pb).sum() - mu_a * mu_b
                    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
                    vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                                / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_matches_patch_oracle(rng):
    a = rng.uniform(0, 1, (1, 2, 13, 14))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert ssim(Tensor(a), Tensor(b)) == pytest.approx(
        ssim_oracle(a, b), rel=1e-10)


def test_ssim_identical_images_score_one(rng):
    a = rng.uniform(0, 1, (1, 3, 12, 12))
    assert ssim(Tensor(a), Tensor(a.copy())) == pytest.approx(1.0, abs=1e-9)


def test_ssim_degrades_with_noise(rng):
    a = rng.uniform(0, 1, (1, 3, 16, 16))
    mild = np.clip(a + rng.normal(0, 0.02, a.shape), 0, 1)
    harsh = np.clip(a + rng.normal(0, 0.3, a.shape), 0, 1)
    assert ssim(Tensor(a), Tensor(harsh)) < ssim(Tensor(a), Tensor(mild)) < 1.0


def test_ssim_validates_inputs(rng):
    small = Tensor(rng.uniform(0, 1, (1, 3, 8, 8)))
    with pytest.raises(ShapeError, match="extent"):
        ssim(small, small)
    flat = Tensor(rng.uniform(0, 1, (3, 16, 16)))
    with pytest.raises(ShapeError, match="rank 4"):
        ssim(flat, flat)
