import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppgnas.graph import INPUT, Graph, LayerSpec, Model, Node, conv, dw_block, random_graph
from ppgnas.quant import (QMAX, QMIN, QuantError, QuantParams, encode_multiplier, export_int_graph, fake_quant,
                          fake_quant_bias, lower, minmax_affine_params, pact, pact_params, qat_finetune,
                          requantize, rounding_shift)
from ppgnas.tensor import Tensor, gradcheck, no_grad, ops


class TestMinMax:
    def test_closed_form(self):
        q = minmax_affine_params(np.array([-1.0, 3.0]))
        assert q.scale == pytest.approx(4 / 255) and q.zero_point == -64
        assert q.quantize(0.0) == -64 and q.dequantize(-64) == 0.0

    def test_constant_zero(self):
        q = minmax_affine_params(np.zeros(5))
        assert (q.scale, q.zero_point) == (1.0, 0)
        assert q.dequantize(q.quantize(np.zeros(5))).tolist() == [0.0] * 5

    @pytest.mark.parametrize("c", [0.3, -2.5, 1e-4])
    def test_constant_maps_exactly(self, c):
        q = minmax_affine_params(np.full(4, c))
        np.testing.assert_allclose(q.dequantize(q.quantize(np.full(4, c))), c, rtol=1e-12)

    def test_symmetric_range_ties_to_even(self):
        assert minmax_affine_params(np.array([-1.0, 1.0])).zero_point == 0

    def test_nan_rejected(self):
        with pytest.raises(QuantError):
            minmax_affine_params(np.array([1.0, np.nan]))

    @given(lo=st.floats(-100, 100), width=st.floats(1e-3, 100), seed=st.integers(0, 1000))
    @settings(max_examples=100)
    def test_roundtrip_within_half_step(self, lo, width, seed):
        x = np.random.default_rng(seed).uniform(lo, lo + width, 64)
        q = minmax_affine_params(x)
        err = np.abs(q.dequantize(q.quantize(x)) - x)
        assert err.max() <= q.scale / 2 * (1 + 1e-9) + 1e-12

    def test_on_grid_values_are_fixed_points(self):
        q = QuantParams(0.05, 3)
        levels = np.arange(QMIN, QMAX + 1)
        np.testing.assert_array_equal(q.quantize(q.dequantize(levels)), levels)


class TestFakeQuant:
    def test_on_grid_unchanged(self):
        x = np.arange(-5, 6) * 0.25
        np.testing.assert_array_equal(fake_quant(Tensor(x), QuantParams(0.25, 0)).data, x)

    def test_saturation(self):
        q = QuantParams(0.1, 0)
        assert fake_quant(Tensor([100.0]), q).data[0] == pytest.approx(12.7)

    def test_rounding_bound(self, rng):
        q = QuantParams(0.03, -5)
        x = rng.uniform(-3.6, 3.9, 1000)
        assert np.abs(fake_quant(Tensor(x, dtype=np.float64), q).data - x).max() <= 0.015 + 1e-12

    def test_straight_through_gradient(self):
        x = Tensor([0.1, 0.5, 20.0, -20.0], requires_grad=True)
        ops.sum(fake_quant(x, QuantParams(0.1, 0))).backward()
        np.testing.assert_array_equal(x.grad, [1, 1, 0, 0])

    def test_bias_grid(self):
        out = fake_quant_bias(Tensor([0.104, -0.25]), 0.01).data
        np.testing.assert_allclose(out, [0.10, -0.25], atol=1e-7)


class TestPact:
    def test_clip_region_and_alpha_gradient(self):
        x, a = Tensor([7.5], requires_grad=True), Tensor(np.float32(6.0), requires_grad=True)
        y = pact(x, a)
        assert y.data[0] == 6.0
        ops.sum(y).backward()
        assert a.grad == 1.0 and x.grad[0] == 0.0

    def test_negative_is_zero(self):
        x, a = Tensor([-1.0], requires_grad=True), Tensor(np.float32(6.0), requires_grad=True)
        y = pact(x, a)
        ops.sum(y).backward()
        assert y.data[0] == 0.0 and x.grad[0] == 0.0 and a.grad == 0.0

    def test_on_grid_value(self):
        y = pact(Tensor([1.0], dtype=np.float64), Tensor(2.55, dtype=np.float64))
        assert y.data[0] == pytest.approx(1.0, abs=1e-12)

    @given(alpha=st.floats(1e-3, 50), seed=st.integers(0, 1000))
    @settings(max_examples=50)
    def test_output_range(self, alpha, seed):
        x = np.random.default_rng(seed).normal(0, 2 * alpha, 200)
        y = pact(Tensor(x, dtype=np.float64), Tensor(alpha, dtype=np.float64)).data
        assert y.min() >= 0 and y.max() <= alpha * (1 + 1e-12)

    def test_alpha_floor(self):
        assert pact_params(0.0).scale == pytest.approx(1e-3 / 255)

    def test_signed_variant(self):
        x, a = Tensor([-5.0, 0.5, 5.0], requires_grad=True), Tensor(np.float32(1.27), requires_grad=True)
        y = pact(x, a, signed=True)
        np.testing.assert_allclose(y.data, [-1.27, 0.5, 1.27], atol=1e-6)
        ops.sum(y).backward()
        assert a.grad == 0.0  # +1 from the top clip, -1 from the bottom clip
        np.testing.assert_array_equal(x.grad, [0, 1, 0])

    def test_ste_matches_surrogate_away_from_boundaries(self, rng):
        alpha = 2.0
        x = rng.uniform(-1, 3, 50)
        x = x[np.abs(x - alpha) > 0.01]
        x = x[np.abs(x) > 0.01]
        err = gradcheck(lambda t, a: pact(t, a), [x, np.array(alpha)], h=1e-5,
                        reference=lambda t, a: ops.sub(ops.relu(t), ops.relu(ops.sub(t, a))))
        assert err < 1e-6


class TestFixedPoint:
    @pytest.mark.parametrize("m0,expected", [(0.5, (2 ** 30, 31)), (0.25, (2 ** 30, 32))])
    def test_binary_normalization(self, m0, expected):
        assert encode_multiplier(m0) == expected

    @given(m0=st.floats(1e-6, 100.0))
    def test_encoding_error(self, m0):
        m, n = encode_multiplier(m0)
        assert 2 ** 30 <= m < 2 ** 31
        assert abs(m * 2.0 ** -n - m0) <= m0 * 2 ** -30

    def test_nonpositive_rejected(self):
        with pytest.raises(QuantError):
            encode_multiplier(0.0)
        with pytest.raises(QuantError):
            encode_multiplier(-0.5)

    @given(v=st.integers(-(2 ** 40), 2 ** 40), n=st.integers(0, 20))
    def test_rounding_shift_is_ties_to_even(self, v, n):
        from fractions import Fraction
        assert int(rounding_shift(v, n)) == round(Fraction(v, 2 ** n))  # Python rounds halves to even

    @given(a=st.integers(-(2 ** 31), 2 ** 31 - 2), n=st.integers(0, 31))
    def test_monotone(self, a, n):
        m = 1_500_000_000
        assert requantize(a, m, n + 31, 0) <= requantize(a + 1, m, n + 31, 0)

    def test_hand_example(self):
        m, n = encode_multiplier(0.5)
        assert requantize(6, m, n, 0) == 3


def seq_model(specs, input_shape, seed=0):
    nodes, prev = [], INPUT
    for i, s in enumerate(specs):
        nodes.append(Node(f"n{i}", s, (prev,)))
        prev = f"n{i}"
    return Model.init(Graph(tuple(nodes), input_shape, prev), seed)


class TestLowering:
    def test_bn_folded_and_relu_fused(self, rng):
        m = seq_model([conv(2, 4, 3, bias=False), LayerSpec("BatchNorm", 4, 4), LayerSpec("ReLU"),
                       conv(4, 1, 1, padding=0)], (2, 16))
        bn = m.buffers["n1"]
        bn["running_mean"][:] = rng.normal(size=4)
        bn["running_var"][:] = rng.uniform(0.5, 2, 4)
        qm = lower(m)
        assert [(L.id, L.kind, L.relu) for L in qm.layers] == [("n0", "conv", True), ("n3", "conv", False)]
        assert not qm.layers[0].act.signed and qm.layers[1].act.signed
        x = rng.standard_normal((3, 2, 16))
        with no_grad():
            np.testing.assert_allclose(qm(Tensor(x), quantize=False).data, m(Tensor(x)).data, rtol=1e-5, atol=1e-5)

    def test_dw_block_splits(self):
        qm = lower(seq_model([dw_block(3, 5, 3)], (3, 8)))
        assert [(L.id, L.groups) for L in qm.layers] == [("n0.dw", 3), ("n0", 1)]

    def test_stray_batchnorm_becomes_depthwise(self):
        qm = lower(seq_model([LayerSpec("BatchNorm", 2, 2)], (2, 8)))
        assert qm.layers[0].kind == "conv" and qm.layers[0].groups == 2 and qm.layers[0].k == 1

    def test_zero_epochs_keeps_weights(self):
        from ppgnas.training import TaskData
        m = seq_model([conv(1, 2, 3), LayerSpec("GlobalAvgPool"), LayerSpec("Linear", 2, 1)], (1, 16))
        x = np.random.default_rng(0).standard_normal((8, 1, 16)).astype(np.float32)
        qm = qat_finetune(m, TaskData(x, np.zeros((8, 1), np.float32), np.zeros(8), np.zeros(8)), epochs=0)
        np.testing.assert_array_equal(qm.layers[0].weight.data, m.params["n0"]["weight"].data)
        assert all(L.act.params().scale > 0 for L in qm.layers if L.act is not None)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_folded_float_path_matches_model(self, seed):
        rng = np.random.default_rng(seed)
        m = Model.init(random_graph(rng), seed)
        x = rng.standard_normal((2,) + m.graph.input_shape)
        with no_grad():
            np.testing.assert_allclose(lower(m)(Tensor(x), quantize=False).data, m(Tensor(x)).data,
                                       rtol=1e-4, atol=1e-4)


class TestExport:
    def test_layer_params(self, rng):
        m = seq_model([conv(1, 3, 3), LayerSpec("ReLU"), LayerSpec("AvgPool", 3, 3, 2, 2, 0)], (1, 16))
        qm = lower(m)
        qm.calibrate(rng.standard_normal((4, 1, 16)))
        ig = export_int_graph(qm)
        conv_l, pool = ig.layers
        assert conv_l.weight.dtype == np.int8 and conv_l.bias.dtype == np.int32
        assert pool.mult == ((2 ** 30, 31),) and pool.zero_in == (conv_l.zero_out,) == (-128,)
        s_in, s_w = ig.input_q.scale, minmax_affine_params(qm.layers[0].weight.data).scale
        m_, n_ = conv_l.mult[0]
        assert m_ * 2.0 ** -n_ == pytest.approx(s_in * s_w / ig.scales["n0"].scale, rel=2 ** -30)
