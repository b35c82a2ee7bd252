import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import adam_unrolled, naive_conv1d, naive_depthwise
from ppgnas.tensor import (Adam, AdamState, AutogradError, ShapeError, Tensor, adam_step, float64_mode, gradcheck,
                           ops)


def T(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad, dtype=np.float64)


class TestConv:
    def test_identity_kernel(self):
        out = ops.conv1d(T([[[1, 2, 3]]]), T([[[1]]]), T([0]))
        np.testing.assert_array_equal(out.data, [[[1, 2, 3]]])

    def test_sum_plus_bias(self):
        out = ops.conv1d(T([[[1, 2, 3]]]), T([[[1, 1, 1]]]), T([1]))
        np.testing.assert_array_equal(out.data, [[[7]]])

    def test_matches_naive_loop(self, rng):
        x, w, b = rng.standard_normal((2, 4, 16)), rng.standard_normal((8, 4, 3)), rng.standard_normal(8)
        out = ops.conv1d(T(x), T(w), T(b), stride=2, padding=1)
        assert out.shape == (2, 8, 8)
        np.testing.assert_allclose(out.data, naive_conv1d(x, w, b, 2, 1), atol=1e-6)

    def test_float32_matches_naive_loop(self, rng):
        x, w, b = rng.standard_normal((2, 4, 16)), rng.standard_normal((8, 4, 3)), rng.standard_normal(8)
        out = ops.conv1d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
        assert out.data.dtype == np.float32
        np.testing.assert_allclose(out.data, naive_conv1d(x, w, b, 2, 1), atol=1e-5)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError, match="channels"):
            ops.conv1d(T(np.zeros((1, 3, 8))), T(np.zeros((2, 4, 3))))

    def test_invalid_geometry(self):
        with pytest.raises(ShapeError):
            ops.conv1d(T(np.zeros((1, 1, 2))), T(np.zeros((1, 1, 5))))

    @given(c=st.integers(1, 4), length=st.integers(1, 12))
    @settings(max_examples=25, deadline=None)
    def test_unit_kernel_identity_map(self, c, length):
        x = np.random.default_rng(c * 100 + length).standard_normal((2, c, length))
        w = np.eye(c)[:, :, None]
        np.testing.assert_array_equal(ops.conv1d(T(x), T(w)).data, x)


class TestDepthwise:
    def test_per_channel_scaling(self):
        out = ops.depthwise_conv1d(T([[[1, 2, 3], [4, 5, 6]]]), T([[[1]], [[2]]]), T([0, 0]))
        np.testing.assert_array_equal(out.data, [[[1, 2, 3], [8, 10, 12]]])

    def test_all_ones_kernel(self):
        out = ops.depthwise_conv1d(T([[[1, 2, 3], [1, 2, 3]]]), T(np.ones((2, 1, 3)) * [[[1]], [[2]]]))
        np.testing.assert_array_equal(out.data, [[[6], [12]]])

    def test_matches_naive_loop(self, rng):
        x, w, b = rng.standard_normal((1, 8, 32)), rng.standard_normal((8, 1, 3)), rng.standard_normal(8)
        out = ops.depthwise_conv1d(T(x), T(w), T(b), 1, 1)
        np.testing.assert_allclose(out.data, naive_depthwise(x, w, b, 1, 1), atol=1e-6)


class TestStructural:
    def test_relu(self):
        np.testing.assert_array_equal(ops.relu(T([-1, 0, 2])).data, [0, 0, 2])

    def test_add(self):
        np.testing.assert_array_equal(ops.add(T([1, 2]), T([3, 4])).data, [4, 6])

    def test_upsample(self):
        np.testing.assert_array_equal(ops.upsample(T([[[1, 2]]])).data, [[[1, 1, 2, 2]]])

    def test_concat_requires_equal_lengths(self):
        with pytest.raises(ShapeError):
            ops.concat([T(np.zeros((1, 2, 4))), T(np.zeros((1, 2, 5)))])

    def test_pools(self):
        x = T([[[1, 5, 2, 4, 3, 0]]])
        np.testing.assert_array_equal(ops.max_pool1d(x, 2).data, [[[5, 4, 3]]])
        np.testing.assert_array_equal(ops.avg_pool1d(x, 2).data, [[[3, 3, 1.5]]])
        np.testing.assert_array_equal(ops.global_avg_pool(x).data, [[2.5]])

    def test_batchnorm_eval_uses_running_stats(self):
        rm, rv = np.array([1.0]), np.array([4.0])
        out = ops.batch_norm(T([[[3.0, 5.0]]]), T([2.0]), T([1.0]), rm, rv, training=False, eps=0.0)
        np.testing.assert_allclose(out.data, [[[3.0, 5.0]]])

    def test_batchnorm_train_updates_running_stats(self):
        rm, rv = np.zeros(1), np.ones(1)
        ops.batch_norm(T([[[1.0, 3.0]]]), T([1.0]), T([0.0]), rm, rv, training=True)
        np.testing.assert_allclose(rm, [0.2])
        np.testing.assert_allclose(rv, [0.9 + 0.1 * 2.0])


class TestBackward:
    def test_linear_form(self):
        w = T([0.5, -1.0, 2.0], grad=True)
        ops.sum(ops.mul(w, T([1, 2, 3]))).backward()
        np.testing.assert_array_equal(w.grad, [1, 2, 3])

    def test_frozen_tensor_has_no_grad(self):
        w, x = T([1.0, 2.0], grad=True), T([3.0, 4.0])
        ops.sum(ops.mul(w, x)).backward()
        assert x.grad is None

    def test_nonscalar_backward_rejected(self):
        with pytest.raises(AutogradError, match="scalar"):
            ops.mul(T([1.0, 2.0], grad=True), 2.0).backward()

    def test_second_backward_rejected(self):
        loss = ops.sum(ops.mul(T([1.0], grad=True), 2.0))
        loss.backward()
        with pytest.raises(AutogradError, match="consumed"):
            loss.backward()

    def test_mse_of_conv_matches_finite_differences(self, rng):
        y = rng.standard_normal((2, 3, 7))

        def f(x, w):
            return ops.mse_loss(ops.conv1d(x, w, None, 1, 1), y)

        err = gradcheck(f, [rng.standard_normal((2, 2, 7)), rng.standard_normal((3, 2, 3))])
        assert err < 1e-3

    def test_shared_subexpression_accumulates(self):
        x = T([2.0], grad=True)
        y = ops.mul(x, x)
        ops.sum(ops.add(y, y)).backward()
        np.testing.assert_allclose(x.grad, [8.0])

    def test_determinism(self, rng):
        x, w = rng.standard_normal((2, 3, 20)), rng.standard_normal((4, 3, 5))
        runs = []
        for _ in range(2):
            wt = Tensor(w, requires_grad=True)
            loss = ops.mean(ops.relu(ops.conv1d(Tensor(x), wt, None, 2, 2)))
            loss.backward()
            runs.append((loss.data.tobytes(), wt.grad.tobytes()))
        assert runs[0] == runs[1]


class TestAdam:
    def test_first_step_closed_form(self):
        p = Tensor([1.0], requires_grad=True)
        p.grad = np.array([0.5], dtype=np.float32)
        adam_step(p, AdamState.for_param(p, lr=0.001))
        assert p.data[0] == pytest.approx(1.0 - 0.001 * 0.5 / (0.5 + 1e-8), abs=1e-7)
        assert p.data[0] == pytest.approx(0.999, abs=1e-7)

    def test_zero_grad_is_noop(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        s = AdamState.for_param(p)
        for _ in range(3):
            p.grad = np.zeros(2, np.float32)
            adam_step(p, s)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert s.t == 3

    def test_two_steps_match_unrolled_recurrence(self):
        with float64_mode():
            p = Tensor([0.3], requires_grad=True)
        s = AdamState.for_param(p, lr=0.01)
        for _ in range(2):
            p.grad = np.array([1.0])
            adam_step(p, s)
        assert abs(p.data[0] - adam_unrolled(0.3, [1.0, 1.0], 0.01)) < 1e-7
        assert np.all(s.v >= 0)

    def test_missing_grad_raises(self):
        p = Tensor([1.0], requires_grad=True)
        with pytest.raises(AutogradError):
            adam_step(p, AdamState.for_param(p))

    def test_optimizer_skips_params_without_grad(self):
        a, b = Tensor([1.0], requires_grad=True), Tensor([1.0], requires_grad=True)
        opt = Adam([a, b], lr=0.1)
        a.grad = np.array([1.0], np.float32)
        opt.step()
        assert a.data[0] < 1.0 and b.data[0] == 1.0
        assert opt.states[1].t == 0
