"""Autodiff engine: forward values pinned by oracles, gradients by finite differences.

Kink points (relu/leaky_relu at 0, clamp at its ends) are excluded from the
finite-difference probes by construction of the random inputs: sampled
magnitudes stay at least 0.1 away from every kink while eps is 1e-3.
"""

import numpy as np
import pytest

from lfcam import autodiff as ad
from lfcam.autodiff import OPSET, Tensor, grad_check


def away_from_zero(rng, shape, margin=0.1):
    return (rng.uniform(margin, 1.0, shape) * rng.choice([-1.0, 1.0], shape)).astype(np.float64)


def scalarize(out: Tensor, w: np.ndarray) -> Tensor:
    """Weighted sum with fixed weights; exposes transpose bugs a plain sum hides."""
    return ad.sum_leading(ad.mul(out, ad.constant(w)), out.data.ndim)


def _case_add(rng):
    w = rng.standard_normal((3, 4))
    return (lambda ls: scalarize(ad.add(ls[0], ls[1]), w),
            [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))])


def _case_mul(rng):
    w = rng.standard_normal((3, 4))
    return (lambda ls: scalarize(ad.mul(ls[0], ls[1]), w),
            [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))])


def _case_smul(rng):
    w = rng.standard_normal((2, 5))
    return (lambda ls: scalarize(ad.smul(ls[0], -1.7), w), [rng.standard_normal((2, 5))])


def _case_sum_leading(rng):
    w = rng.standard_normal(5)
    return (lambda ls: scalarize(ad.sum_leading(ls[0], 2), w),
            [rng.standard_normal((2, 3, 5))])


def _case_conv2d(rng):
    w = rng.standard_normal((3, 5, 6))
    return (lambda ls: scalarize(ad.conv2d(ls[0], ls[1], ls[2]), w),
            [rng.standard_normal((2, 5, 6)), rng.standard_normal((3, 2, 3, 3)),
             rng.standard_normal(3)])


def _case_relu(rng):
    w = rng.standard_normal((4, 4))
    return (lambda ls: scalarize(ad.relu(ls[0]), w), [away_from_zero(rng, (4, 4))])


def _case_leaky_relu(rng):
    w = rng.standard_normal((4, 4))
    return (lambda ls: scalarize(ad.leaky_relu(ls[0], 0.1), w), [away_from_zero(rng, (4, 4))])


def _case_clamp(rng):
    # half the values deep inside [0, 1], half clearly outside
    inside = rng.uniform(0.1, 0.9, 8)
    outside = np.concatenate([rng.uniform(1.1, 2.0, 4), rng.uniform(-1.0, -0.1, 4)])
    x = np.concatenate([inside, outside]).reshape(4, 4)
    w = rng.standard_normal((4, 4))
    return (lambda ls: scalarize(ad.clamp(ls[0], 0.0, 1.0), w), [x])


def _case_sigmoid(rng):
    w = rng.standard_normal((3, 3))
    return (lambda ls: scalarize(ad.sigmoid(ls[0], tau=4.0), w),
            [rng.standard_normal((3, 3))])


def _case_pixel_shuffle(rng):
    w = rng.standard_normal((2, 6, 8))
    return (lambda ls: scalarize(ad.pixel_shuffle(ls[0], 2), w),
            [rng.standard_normal((8, 3, 4))])


def _case_space_to_depth(rng):
    w = rng.standard_normal((8, 3, 4))
    return (lambda ls: scalarize(ad.space_to_depth(ls[0], 2), w),
            [rng.standard_normal((2, 6, 8))])


def _case_concat_channels(rng):
    w = rng.standard_normal((5, 4, 4))
    return (lambda ls: scalarize(ad.concat_channels(list(ls)), w),
            [rng.standard_normal((2, 4, 4)), rng.standard_normal((3, 4, 4))])


def _case_mse(rng):
    return (lambda ls: ad.mse(ls[0], ls[1]),
            [rng.standard_normal((3, 5)), rng.standard_normal((3, 5))])


def _case_reshape(rng):
    w = rng.standard_normal((3, 4))
    return (lambda ls: scalarize(ad.reshape(ls[0], (3, 4)), w),
            [rng.standard_normal((2, 6))])


def _case_aperture_apply(rng):
    w = rng.standard_normal((2, 8, 8))
    return (lambda ls: scalarize(ad.aperture_apply(ls[0], ls[1]), w),
            [rng.standard_normal((2, 2, 3, 8, 8)), rng.standard_normal((2, 2, 3))])


def _case_tile_separable(rng):
    w = rng.standard_normal((2, 16, 24))
    return (lambda ls: scalarize(ad.tile_separable(ls[0], ls[1], 16, 24), w),
            [rng.standard_normal((2, 8)), rng.standard_normal((2, 8))])


def _case_phase_mask_apply(rng):
    w = rng.standard_normal((16, 16))
    return (lambda ls: scalarize(ad.phase_mask_apply(ls[0], ls[1]), w),
            [rng.standard_normal((2, 2, 2, 16, 16)), rng.standard_normal((2, 2, 2, 8, 8))])


GRAD_CASES = {
    "add": _case_add,
    "mul": _case_mul,
    "smul": _case_smul,
    "sum_leading": _case_sum_leading,
    "conv2d": _case_conv2d,
    "relu": _case_relu,
    "leaky_relu": _case_leaky_relu,
    "clamp": _case_clamp,
    "sigmoid": _case_sigmoid,
    "pixel_shuffle": _case_pixel_shuffle,
    "space_to_depth": _case_space_to_depth,
    "concat_channels": _case_concat_channels,
    "mse": _case_mse,
    "reshape": _case_reshape,
    "aperture_apply": _case_aperture_apply,
    "tile_separable": _case_tile_separable,
    "phase_mask_apply": _case_phase_mask_apply,
}


def test_every_registered_op_has_a_gradient_case():
    assert set(GRAD_CASES) == set(OPSET)


@pytest.mark.parametrize("name", sorted(OPSET))
def test_gradcheck(name):
    fn, inputs = GRAD_CASES[name](np.random.default_rng(hash(name) % 2**32))
    report = grad_check(fn, inputs, tolerance=1e-4, eps=1e-3)
    assert report.passed, f"{name}: {report!r}"
    assert report.checked > 0


class TestForwardValues:
    def test_add_mul_require_same_shape(self):
        a = ad.constant(np.zeros((2, 3)))
        b = ad.constant(np.zeros((3, 2)))
        with pytest.raises(ValueError):
            ad.add(a, b)
        with pytest.raises(ValueError):
            ad.mul(a, b)

    def test_smul_value(self):
        x = ad.constant(np.array([1.0, -2.0], dtype=np.float32))
        y = ad.smul(x, 0.5)
        np.testing.assert_array_equal(y.data, [0.5, -1.0])
        assert y.data.dtype == np.float32

    def test_sum_leading_values(self, rng):
        x = rng.standard_normal((2, 3, 4))
        t = ad.constant(x)
        np.testing.assert_allclose(ad.sum_leading(t, 1).data, x.sum(axis=0))
        np.testing.assert_allclose(ad.sum_leading(t, 2).data, x.sum(axis=(0, 1)))
        assert ad.sum_leading(t, 3).data.shape == ()
        with pytest.raises(ValueError):
            ad.sum_leading(t, 0)
        with pytest.raises(ValueError):
            ad.sum_leading(t, 4)

    def test_pointwise_values(self):
        x = ad.constant(np.array([-2.0, -0.5, 0.5, 2.0]))
        np.testing.assert_array_equal(ad.relu(x).data, [0.0, 0.0, 0.5, 2.0])
        np.testing.assert_allclose(ad.leaky_relu(x, 0.1).data, [-0.2, -0.05, 0.5, 2.0])
        np.testing.assert_array_equal(ad.clamp(x, 0.0, 1.0).data, [0.0, 0.0, 0.5, 1.0])
        np.testing.assert_allclose(
            ad.sigmoid(x, tau=2.0).data, 1.0 / (1.0 + np.exp(-2.0 * x.data))
        )

    def test_mse_hand_value(self):
        pred = ad.constant(np.array([1.0, 2.0]))
        target = ad.constant(np.array([0.0, 0.0]))
        assert float(ad.mse(pred, target).data) == pytest.approx(2.5)

    def test_mse_zero_at_equality(self, rng):
        x = rng.standard_normal((3, 3))
        assert float(ad.mse(ad.constant(x), ad.constant(x.copy())).data) == 0.0

    def test_concat_channels_layout(self, rng):
        a = rng.standard_normal((2, 4, 4))
        b = rng.standard_normal((3, 4, 4))
        out = ad.concat_channels([ad.constant(a), ad.constant(b)])
        assert out.data.shape == (5, 4, 4)
        np.testing.assert_array_equal(out.data[:2], a)
        np.testing.assert_array_equal(out.data[2:], b)


class TestConv2d:
    def test_matches_reference_loops(self, rng):
        x = rng.standard_normal((3, 6, 7))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        fast = ad.conv2d(ad.constant(x), ad.constant(w), ad.constant(b)).data
        slow = ad.conv2d_reference(x, w, b)
        np.testing.assert_allclose(fast, slow, rtol=1e-10, atol=1e-12)

    def test_matches_reference_without_bias(self, rng):
        x = rng.standard_normal((2, 5, 5))
        w = rng.standard_normal((1, 2, 5, 5))
        np.testing.assert_allclose(
            ad.conv2d(ad.constant(x), ad.constant(w)).data,
            ad.conv2d_reference(x, w),
            rtol=1e-10, atol=1e-12,
        )

    def test_identity_kernel(self, rng):
        x = rng.standard_normal((2, 6, 6))
        w = np.zeros((2, 2, 3, 3))
        w[0, 0, 1, 1] = 1.0
        w[1, 1, 1, 1] = 1.0
        out = ad.conv2d(ad.constant(x), ad.constant(w)).data
        np.testing.assert_allclose(out, x, atol=1e-12)

    def test_averaging_kernel_interior(self):
        x = np.ones((1, 5, 5))
        w = np.full((1, 1, 3, 3), 1.0 / 9.0)
        out = ad.conv2d(ad.constant(x), ad.constant(w)).data
        assert out[0, 2, 2] == pytest.approx(1.0)
        # zero padding: the corner window sees only 4 ones
        assert out[0, 0, 0] == pytest.approx(4.0 / 9.0)

    def test_shape_validation(self, rng):
        x = ad.constant(rng.standard_normal((2, 5, 5)))
        with pytest.raises(ValueError):
            ad.conv2d(x, ad.constant(rng.standard_normal((4, 3, 3, 3))))  # channel mismatch
        with pytest.raises(ValueError):
            ad.conv2d(x, ad.constant(rng.standard_normal((4, 2, 2, 2))))  # even kernel
        with pytest.raises(ValueError):
            ad.conv2d(x, ad.constant(rng.standard_normal((4, 2, 3, 3))),
                      ad.constant(np.zeros(5)))  # bias length


class TestPixelRearrange:
    def test_pixel_shuffle_index_contract(self, rng):
        r = 2
        x = rng.standard_normal((8, 3, 4))
        out = ad.pixel_shuffle(ad.constant(x), r).data
        assert out.shape == (2, 6, 8)
        for c in range(2):
            for h in range(3):
                for w in range(4):
                    for dy in range(r):
                        for dx in range(r):
                            assert out[c, r * h + dy, r * w + dx] == x[c * r * r + r * dy + dx, h, w]

    def test_round_trips(self, rng):
        x = rng.standard_normal((8, 3, 4))
        t = ad.constant(x)
        back = ad.space_to_depth(ad.pixel_shuffle(t, 2), 2)
        np.testing.assert_array_equal(back.data, x)
        y = rng.standard_normal((2, 6, 8))
        back2 = ad.pixel_shuffle(ad.space_to_depth(ad.constant(y), 2), 2)
        np.testing.assert_array_equal(back2.data, y)

    def test_space_to_depth_matches_core_packing(self, rng):
        from lfcam.core import CodedImage, pack_space_to_depth

        img = rng.random((16, 24)).astype(np.float32)
        packed = pack_space_to_depth(CodedImage(img))
        out = ad.space_to_depth(ad.constant(img[None]), 8).data
        np.testing.assert_array_equal(out, packed.data)

    def test_dimension_validation(self, rng):
        with pytest.raises(ValueError):
            ad.pixel_shuffle(ad.constant(rng.standard_normal((6, 3, 4))), 2)
        with pytest.raises(ValueError):
            ad.space_to_depth(ad.constant(rng.standard_normal((2, 5, 8))), 2)


class TestDomainOps:
    def test_aperture_apply_matches_forward_module(self, rng):
        from lfcam.core import Dims, LightField5D
        from lfcam.forward import AperturePattern, aperture_code

        d = Dims(n_u=3, n_v=2, n_x=8, n_y=8, n_t=2)
        lf = LightField5D(d, rng.random(d.shape).astype(np.float32))
        a = rng.random((2, 2, 3)).astype(np.float32)
        got = ad.aperture_apply(ad.constant(lf.data), ad.constant(a)).data
        want = aperture_code(lf, AperturePattern(a))
        np.testing.assert_allclose(got, want, rtol=1e-6)

    def test_tile_separable_matches_loop(self, rng):
        rows = rng.random((2, 8))
        cols = rng.random((2, 8))
        out = ad.tile_separable(ad.constant(rows), ad.constant(cols), 16, 24).data
        for t in range(2):
            for y in range(16):
                for x in range(24):
                    assert out[t, y, x] == pytest.approx(rows[t, y % 8] * cols[t, x % 8])

    def test_phase_mask_apply_matches_forward_module(self, rng):
        from lfcam.core import Dims, LightField5D
        from lfcam.forward import Free5DMask, free5d_capture

        d = Dims(n_u=2, n_v=2, n_x=16, n_y=16, n_t=2)
        lf = LightField5D(d, rng.random(d.shape).astype(np.float32))
        m = rng.random((2, 2, 2, 8, 8)).astype(np.float32)
        got = ad.phase_mask_apply(ad.constant(lf.data), ad.constant(m)).data
        want = free5d_capture(lf, Free5DMask(m)).data
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)

    def test_domain_op_validation(self, rng):
        lf = ad.constant(rng.standard_normal((2, 2, 2, 16, 16)))
        with pytest.raises(ValueError):
            ad.aperture_apply(lf, ad.constant(np.zeros((2, 2, 3))))
        with pytest.raises(ValueError):
            ad.tile_separable(ad.constant(np.zeros((2, 8))), ad.constant(np.zeros((2, 8))),
                              12, 16)
        with pytest.raises(ValueError):
            ad.phase_mask_apply(lf, ad.constant(np.zeros((2, 2, 2, 4, 4))))


class TestGraphMechanics:
    def test_diamond_fanout_accumulates(self):
        x = ad.parameter(np.array([2.0, -3.0]))
        y = ad.mul(x, x)
        z = ad.sum_leading(ad.add(y, x), 1)
        z.backward()
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_shared_node_used_by_two_ops(self):
        x = ad.parameter(np.array([1.0, 2.0]))
        u = ad.smul(x, 3.0)
        z = ad.sum_leading(ad.add(ad.mul(u, u), u), 1)
        z.backward()
        # d/dx (9x^2 + 3x) = 18x + 3
        np.testing.assert_allclose(x.grad, 18 * x.data + 3)

    def test_backward_requires_scalar(self):
        x = ad.parameter(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            ad.relu(x).backward()

    def test_constants_get_no_gradient(self):
        x = ad.parameter(np.array([1.0]))
        c = ad.constant(np.array([2.0]))
        z = ad.sum_leading(ad.mul(x, c), 1)
        z.backward()
        assert c.grad is None
        np.testing.assert_allclose(x.grad, [2.0])
        assert not ad.add(c, c).requires_grad

    def test_deep_chain_does_not_recurse(self):
        x = ad.parameter(np.array([1.0]))
        z = x
        for _ in range(2000):
            z = ad.smul(z, 1.0)
        ad.sum_leading(z, 1).backward()
        np.testing.assert_allclose(x.grad, [1.0])

    def test_requires_grad_propagates(self):
        x = ad.parameter(np.zeros((2, 2)))
        c = ad.constant(np.zeros((2, 2)))
        assert ad.add(x, c).requires_grad
        assert not ad.mul(c, c).requires_grad


class TestGradCheckHarness:
    def test_report_fields(self, rng):
        fn, inputs = GRAD_CASES["mul"](rng)
        rep = grad_check(fn, inputs)
        assert rep.passed and rep.max_rel <= rep.tolerance
        assert rep.checked == 24  # both (3, 4) inputs fully probed
        assert "pass" in repr(rep)

    def test_detects_wrong_gradient(self):
        def broken(ls):
            # forward x^2 but gradient claimed for 3x^2 via a fabricated node
            x = ls[0]
            out = Tensor((x.data ** 2).sum(), parents=(x,), op="broken")

            def backward(g):
                x.accumulate(g * 3.0 * x.data ** 2)

            out._backward = backward
            return out

        rep = grad_check(broken, [np.array([1.0, 2.0])])
        assert not rep.passed

    def test_runs_in_float64(self):
        seen = []

        def fn(ls):
            seen.append(ls[0].data.dtype)
            return ad.mse(ls[0], ad.constant(np.zeros_like(ls[0].data)))

        grad_check(fn, [np.zeros(3, dtype=np.float32)])
        assert all(dt == np.float64 for dt in seen)
