import numpy as np
import pytest

from darkir import autodiff as ad
from darkir.autodiff import Tape, backward
from darkir.conv import ConvSpec
from darkir.tensor import ShapeError, Tensor

from conftest import central_diff


def scalarize(tape, vid):
    """Reduce any node to a deterministic scalar: sum of x + 0.3 * x^2."""
    return ad.add(tape, ad.abs_sum(tape, vid),
                  ad.scale(tape, ad.sq_sum(tape, vid), 0.3))


def check_grad(build, x0: np.ndarray, rel_tol=1e-6, h=1e-6):
    """build(tape, leaf_id) -> scalar VarId; compares backward vs central FD."""
    def value(arr):
        t = Tape()
        xid = t.leaf(Tensor(arr.copy()))
        return float(t.value(build(t, xid)).data[0])

    tape = Tape()
    xid = tape.leaf(Tensor(x0.copy()))
    loss = build(tape, xid)
    g = backward(tape, loss)[xid].data
    fd_g = central_diff(value, x0.astype(np.float64), h=h)
    denom = max(np.abs(fd_g).max(), 1e-8)
    assert np.abs(g - fd_g).max() / denom < rel_tol, \
        f"analytic vs FD mismatch: {np.abs(g - fd_g).max() / denom:.3e}"


def test_add_mul_grads(rng):
    x0 = rng.standard_normal((2, 3, 4, 4))

    def build(t, x):
        y = ad.mul(t, x, x)
        z = ad.add(t, y, ad.neg(t, x))
        return scalarize(t, z)
    check_grad(build, x0)


def test_broadcast_add_grad(rng):
    x0 = rng.standard_normal((1, 3, 1, 1))
    other = Tensor(rng.standard_normal((2, 3, 4, 4)))

    def build(t, x):
        return scalarize(t, ad.add(t, t.leaf(other), x))
    check_grad(build, x0)


def test_absolute_and_scale_grads(rng):
    x0 = rng.standard_normal((3, 5)) + 0.1  # keep away from the kink

    def build(t, x):
        return ad.sq_sum(t, ad.scale(t, ad.absolute(t, x), -1.7))
    check_grad(build, x0)


def test_sub_grad(rng):
    x0 = rng.standard_normal((2, 6))
    other = Tensor(rng.standard_normal((2, 6)))

    def build(t, x):
        return scalarize(t, ad.sub(t, x, t.leaf(other)))
    check_grad(build, x0)


def test_layer_norm_grads_all_inputs(rng):
    x0 = rng.standard_normal((2, 4, 3, 3))
    gain0 = rng.standard_normal(4) + 1.0
    off0 = rng.standard_normal(4)

    def build_x(t, x):
        return scalarize(t, ad.layer_norm(
            t, x, t.leaf(Tensor(gain0.copy())), t.leaf(Tensor(off0.copy()))))
    check_grad(build_x, x0, rel_tol=1e-5)

    x_fixed = Tensor(x0.copy())

    def build_gain(t, g):
        return scalarize(t, ad.layer_norm(t, t.leaf(x_fixed), g,
                                          t.leaf(Tensor(off0.copy()))))
    check_grad(build_gain, gain0)

    def build_off(t, o):
        return scalarize(t, ad.layer_norm(t, t.leaf(x_fixed),
                                          t.leaf(Tensor(gain0.copy())), o))
    check_grad(build_off, off0)


@pytest.mark.parametrize("spec", [ConvSpec(3), ConvSpec(3, stride=2),
                                  ConvSpec(3, dilation=2, groups=2), ConvSpec(1)],
                         ids=["k3", "k3s2", "k3d2g2", "k1"])
def test_conv2d_grads(spec, rng):
    x0 = rng.standard_normal((2, 4, 6, 6))
    w0 = rng.standard_normal((4, 4 // spec.groups, spec.kernel_size, spec.kernel_size))
    b0 = rng.standard_normal(4)

    def build_x(t, x):
        return scalarize(t, ad.conv2d(t, x, t.leaf(Tensor(w0.copy())),
                                      t.leaf(Tensor(b0.copy())), spec))
    check_grad(build_x, x0, rel_tol=1e-5)

    x_fixed = Tensor(x0.copy())

    def build_w(t, w):
        return scalarize(t, ad.conv2d(t, t.leaf(x_fixed), w,
                                      t.leaf(Tensor(b0.copy())), spec))
    check_grad(build_w, w0, rel_tol=1e-5)

    def build_b(t, b):
        return scalarize(t, ad.conv2d(t, t.leaf(x_fixed),
                                      t.leaf(Tensor(w0.copy())), b, spec))
    check_grad(build_b, b0, rel_tol=1e-5)


def test_bilinear_resize_grad(rng):
    x0 = rng.standard_normal((1, 2, 4, 5))

    def build(t, x):
        return scalarize(t, ad.bilinear_resize(t, x, 7, 3))
    check_grad(build, x0)


def test_pixel_shuffle_grads(rng):
    x0 = rng.standard_normal((1, 8, 3, 3))

    def build(t, x):
        return scalarize(t, ad.pixel_shuffle(t, x, 2))
    check_grad(build, x0)

    y0 = rng.standard_normal((1, 2, 6, 6))

    def build2(t, x):
        return scalarize(t, ad.pixel_unshuffle(t, x, 2))
    check_grad(build2, y0)


def test_global_avg_pool_grad(rng):
    x0 = rng.standard_normal((2, 3, 4, 4))

    def build(t, x):
        return scalarize(t, ad.global_avg_pool(t, x))
    check_grad(build, x0)


def test_slice_concat_grads(rng):
    x0 = rng.standard_normal((2, 6, 3, 3))

    def build(t, x):
        a = ad.slice_channels(t, x, 0, 2)
        b = ad.slice_channels(t, x, 2, 6)
        y = ad.concat_channels(t, [b, a])
        return scalarize(t, ad.mul(t, y, y))
    check_grad(build, x0, rel_tol=1e-5)


@pytest.mark.parametrize("axis", [2, 3])
def test_shift_replicate_grad(axis, rng):
    x0 = rng.standard_normal((1, 2, 4, 5))

    def build(t, x):
        return scalarize(t, ad.sub(t, ad.shift_replicate(t, x, axis), x))
    check_grad(build, x0)


def test_wrap_phase_grad_and_range(rng):
    x0 = rng.uniform(-9.0, 9.0, (3, 4))
    tape = Tape()
    xid = tape.leaf(Tensor(x0.copy()))
    wid = ad.wrap_phase(tape, xid)
    wrapped = tape.value(wid).data
    assert float(wrapped.min()) > -np.pi and float(wrapped.max()) <= np.pi
    np.testing.assert_allclose(np.exp(1j * wrapped), np.exp(1j * x0), atol=1e-12)
    g = backward(tape, ad.abs_sum(tape, wid))[xid].data
    np.testing.assert_allclose(np.abs(g), 1.0, atol=1e-12)


def test_fft_amplitude_grad(rng):
    x0 = rng.standard_normal((1, 1, 8, 8))

    def build(t, x):
        amp, _ = ad.fft_amplitude_phase(t, x)
        return scalarize(t, amp)
    check_grad(build, x0, rel_tol=1e-5)


def test_fft_phase_grad(rng):
    x0 = rng.standard_normal((1, 1, 4, 4)) + 2.0  # amplitudes well off zero

    def build(t, x):
        _, ph = ad.fft_amplitude_phase(t, x)
        return ad.sq_sum(t, ph)
    check_grad(build, x0, rel_tol=2e-5, h=1e-7)


def test_fft_polar_round_trip_grad(rng):
    x0 = rng.standard_normal((1, 2, 8, 8))

    def build(t, x):
        amp, ph = ad.fft_amplitude_phase(t, x)
        y = ad.ifft_polar(t, amp, ph, (8, 8))
        return scalarize(t, y)
    check_grad(build, x0, rel_tol=1e-5)


def test_ifft_polar_separate_grads(rng):
    base = rng.standard_normal((1, 1, 8, 8))
    s_amp = np.abs(np.fft.rfft2(base)) + 0.5
    s_ph = np.angle(np.fft.rfft2(base))
    ph_fixed = Tensor(s_ph.copy())
    amp_fixed = Tensor(s_amp.copy())

    def build_amp(t, a):
        return scalarize(t, ad.ifft_polar(t, a, t.leaf(ph_fixed), (8, 8)))
    check_grad(build_amp, s_amp, rel_tol=1e-5)

    def build_ph(t, p):
        return scalarize(t, ad.ifft_polar(t, t.leaf(amp_fixed), p, (8, 8)))
    check_grad(build_ph, s_ph, rel_tol=1e-5)


def test_backward_rejects_non_scalar(rng):
    tape = Tape()
    x = tape.leaf(Tensor(rng.standard_normal((2, 3))))
    with pytest.raises(ShapeError):
        backward(tape, x)


def test_gradmap_returns_zeros_for_unvisited(rng):
    tape = Tape()
    x = tape.leaf(Tensor(rng.standard_normal((2, 3))))
    unused = tape.leaf(Tensor(rng.standard_normal((4,))))
    g = backward(tape, ad.abs_sum(tape, x))
    z = g[unused].data
    assert z.shape == (4,)
    assert not z.any()


def test_two_sweeps_are_bit_identical(rng):
    x0 = Tensor(rng.standard_normal((2, 4, 8, 8)).astype(np.float32))
    w0 = Tensor(rng.standard_normal((8, 4, 3, 3)).astype(np.float32))

    def run():
        tape = Tape()
        x = tape.leaf(x0)
        w = tape.leaf(w0)
        y = ad.conv2d(tape, x, w, None, ConvSpec(3))
        amp, ph = ad.fft_amplitude_phase(tape, y)
        z = ad.ifft_polar(tape, amp, ph, (8, 8))
        loss = ad.add(tape, ad.abs_sum(tape, z), ad.sq_sum(tape, y))
        g = backward(tape, loss)
        return g[x].data.copy(), g[w].data.copy()

    gx1, gw1 = run()
    gx2, gw2 = run()
    np.testing.assert_array_equal(gx1, gx2)
    np.testing.assert_array_equal(gw1, gw2)


def test_varids_are_tape_scoped(rng):
    t1, t2 = Tape(), Tape()
    x1 = t1.leaf(Tensor(rng.standard_normal((2,))))
    t2.leaf(Tensor(rng.standard_normal((2,))))
    with pytest.raises(ValueError):
        ad.abs_sum(t2, x1)


def test_fanout_accumulates(rng):
    # y = x used twice: grad should be the sum of both paths
    x0 = rng.standard_normal((3, 3))
    tape = Tape()
    x = tape.leaf(Tensor(x0.copy()))
    loss = ad.add(tape, ad.sq_sum(tape, x), ad.sq_sum(tape, x))
    g = backward(tape, loss)[x].data
    np.testing.assert_allclose(g, 4.0 * x0, rtol=1e-12)
