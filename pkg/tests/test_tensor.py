import numpy as np
import pytest

import csdnet.tensor as T
from csdnet import diagnostics
from csdnet.rng import Rng
from csdnet.tensor import Tensor, grad_check, no_grad


def bilinear_sample(arr, y, x):
    """Independent per-pixel oracle: direct evaluation at a source coord."""
    h, w = arr.shape
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    wy, wx = y - y0, x - x0
    y0c, y1c = np.clip([y0, y0 + 1], 0, h - 1)
    x0c, x1c = np.clip([x0, x0 + 1], 0, w - 1)
    top = arr[y0c, x0c] * (1 - wx) + arr[y0c, x1c] * wx
    bot = arr[y1c, x0c] * (1 - wx) + arr[y1c, x1c] * wx
    return top * (1 - wy) + bot * wy


class TestConv1x1:
    def test_identity_kernel(self):
        x = Tensor([[[2.0, 3.0], [4.0, 5.0]]])
        out = T.conv2d_1x1(x, Tensor([1.0]))
        assert np.array_equal(out.data, [[2, 3], [4, 5]])

    def test_direct_evaluation(self):
        x = Tensor(np.stack([np.full((2, 2), 1.0), np.full((2, 2), 2.0)]))
        out = T.conv2d_1x1(x, Tensor([3.0, 4.0]))
        assert np.allclose(out.data, 11.0)

    def test_zero_kernel(self):
        x = Tensor(np.arange(12.0).reshape(3, 2, 2))
        assert np.all(T.conv2d_1x1(x, Tensor([0.0, 0.0, 0.0])).data == 0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="kernel length"):
            T.conv2d_1x1(Tensor(np.zeros((3, 2, 2))), Tensor([1.0, 2.0]))


class TestConv3x3:
    def test_center_delta_kernel_sums_channels(self):
        x = Tensor(np.arange(18.0).reshape(2, 3, 3))
        w = np.zeros((1, 2, 3, 3))
        w[:, :, 1, 1] = 1.0
        out = T.conv2d_3x3(x, Tensor(w), stride=1)
        assert np.allclose(out.data[0], x.data.sum(axis=0))

    def test_all_ones_on_constant_interior(self):
        c = 1.7
        x = Tensor(np.full((1, 5, 5), c))
        out = T.conv2d_3x3(x, Tensor(np.ones((1, 1, 3, 3))), stride=1)
        assert np.isclose(out.data[0, 2, 2], 9 * c)

    def test_zero_weights(self):
        x = Tensor(np.ones((2, 4, 4)))
        out = T.conv2d_3x3(x, Tensor(np.zeros((3, 2, 3, 3))), stride=2)
        assert out.shape == (3, 2, 2)
        assert np.all(out.data == 0)

    def test_bad_stride_rejected(self):
        with pytest.raises(ValueError, match="stride"):
            T.conv2d_3x3(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), stride=3)


class TestPoolAndActivations:
    def test_gap_constant(self):
        assert np.allclose(T.global_avg_pool(Tensor(np.full((4, 3, 3), 2.5))).data, 2.5)

    def test_gap_mean(self):
        x = Tensor(np.array([[[1.0, 3.0], [5.0, 7.0]]]))
        assert np.isclose(T.global_avg_pool(x).data[0], 4.0)

    def test_gap_1x1_is_copy(self):
        x = Tensor(np.arange(5.0).reshape(5, 1, 1))
        assert np.array_equal(T.global_avg_pool(x).data, np.arange(5.0))

    def test_sigmoid_at_zero(self):
        assert T.sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_softmax_symmetry(self):
        assert np.allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_softmax_closed_form(self):
        assert np.allclose(T.softmax(Tensor([0.0, np.log(3.0)])).data, [0.25, 0.75])

    def test_softmax_sums_to_one_and_shift_invariant(self):
        for seed in range(10):
            v = Rng.derive(seed, "sm").uniform_array(7, -5.0, 5.0)
            s = T.softmax(Tensor(v)).data
            assert abs(s.sum() - 1.0) < 1e-6
            shifted = T.softmax(Tensor(v + 123.456)).data
            assert np.max(np.abs(s - shifted)) < 1e-9

    def test_stability_at_extremes(self):
        assert np.all(np.isfinite(T.sigmoid(Tensor([-800.0, 800.0])).data))
        assert np.all(np.isfinite(T.softmax(Tensor([1e4, -1e4, 0.0])).data))
        assert np.all(np.isfinite(T.log_softmax(Tensor([1e4, -1e4, 0.0])).data))


class TestL2Normalize:
    def test_closed_form(self):
        assert np.allclose(T.l2_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8])

    def test_unit_vector_fixed_point(self):
        v = np.array([0.6, 0.8])
        assert np.allclose(T.l2_normalize(Tensor(v)).data, v, atol=1e-12)

    def test_norm_is_one(self):
        for seed in range(10):
            v = Rng.derive(seed, "l2").uniform_array(5, -3.0, 3.0)
            out = T.l2_normalize(Tensor(v)).data
            assert abs(np.linalg.norm(out) - 1.0) < 1e-6

    def test_zero_vector_clamped_and_flagged(self):
        before = diagnostics.get("l2_normalize.clamped")
        out = T.l2_normalize(Tensor([0.0, 0.0, 0.0]))
        assert np.all(np.isfinite(out.data))
        assert diagnostics.get("l2_normalize.clamped") == before + 1


class TestBilinearResize:
    def test_constant_preserved(self):
        out = T.bilinear_resize_array(np.full((4, 5), 7.0), 9, 3)
        assert np.allclose(out, 7.0)

    def test_1x1_replicates(self):
        out = T.bilinear_resize_array(np.array([[3.25]]), 4, 6)
        assert np.allclose(out, 3.25)

    def test_center_value(self):
        out = T.bilinear_resize_array(np.array([[0.0, 1.0], [2.0, 3.0]]), 3, 3)
        assert np.isclose(out[1, 1], 1.5)

    def test_identity_resize(self):
        a = Rng.derive(0, "id").uniform_array((6, 5))
        out = T.bilinear_resize_array(a, 6, 5)
        assert np.max(np.abs(out - a)) < 1e-9

    def test_matches_per_pixel_oracle(self):
        a = Rng.derive(3, "orc").uniform_array((4, 7), -2.0, 2.0)
        oh, ow = 9, 5
        out = T.bilinear_resize_array(a, oh, ow)
        for i in range(oh):
            for j in range(ow):
                y = (i + 0.5) * (4 / oh) - 0.5
                x = (j + 0.5) * (7 / ow) - 0.5
                assert np.isclose(out[i, j], bilinear_sample(a, y, x), atol=1e-12)

    def test_nonpositive_extent_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            T.bilinear_resize(Tensor(np.zeros((2, 2))), 0, 3)


class TestAutodiff:
    def test_quadratic_exact(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        out = T.sum_all(T.mul(x, x))
        out.backward()
        assert np.isclose(x.grad[0], 6.0)
        err = grad_check(lambda t: T.sum_all(T.mul(t, t)), x)
        assert err < 1e-8

    def test_sum_sigmoid_fd(self):
        v = Tensor(Rng.derive(1, "sig").uniform_array(4, -2.0, 2.0))
        assert grad_check(lambda t: T.sum_all(T.sigmoid(t)), v) <= 1e-4

    def test_constant_function_zero_grads(self):
        v = Tensor(np.ones(3))
        assert grad_check(lambda t: Tensor(2.0, requires_grad=True) * 1.0, v) == 0.0

    def test_detached_gets_no_grad(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        d = x.detach()
        out = T.sum_all(T.mul(T.mul(x, d), d))
        out.backward()
        assert x.grad is not None
        assert d.grad is None

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            T.mul(x, x).backward()

    def test_no_grad_blocks_recording(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            out = T.sum_all(T.sigmoid(x))
        assert not out.requires_grad

    def test_accumulation_across_reuse(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        out = T.sum_all(T.add(T.mul(x, x), x))  # x^2 + x -> 2x + 1 = 5
        out.backward()
        assert np.isclose(x.grad[0], 5.0)

    def test_reverse_execution_order_through_chain(self):
        # gradient through a longer chain matches finite differences
        def f(t):
            h = T.sigmoid(T.mul_scalar(t, 1.7))
            return T.sum_all(T.mul(h, T.add_scalar(t, 0.3)))

        v = Tensor(Rng.derive(5, "chain").uniform_array(6, -1.5, 1.5))
        assert grad_check(f, v) <= 1e-4

    def test_finite_outputs_invariant(self):
        rng = Rng.derive(9, "finite")
        x = Tensor(rng.uniform_array((3, 4, 4), -50.0, 50.0), requires_grad=True)
        k = Tensor(rng.uniform_array(3, -5.0, 5.0), requires_grad=True)
        out = T.sigmoid(T.conv2d_1x1(x, k))
        loss = T.mean_all(out)
        loss.backward()
        assert np.all(np.isfinite(out.data))
        assert np.all(np.isfinite(x.grad))
        assert np.all(np.isfinite(k.grad))


class TestShapeErrors:
    def test_add_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            T.add(Tensor(np.zeros(2)), Tensor(np.zeros(3)))

    def test_matvec_mismatch(self):
        with pytest.raises(ValueError, match="incompatible"):
            T.matvec(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))

    def test_softmax_needs_vector(self):
        with pytest.raises(ValueError, match="1-d"):
            T.softmax(Tensor(np.zeros((2, 2))))
