import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pareto_quadratic
from ppgnas.data import split_per_subject, synth_generate, windows_from_records
from ppgnas.graph import (INPUT, Graph, LayerSpec, Model, Node, build_profile, conv, layer_param_count,
                          param_count, random_graph)
from ppgnas.nas import (DEFAULT_LAMBDAS, NasConfig, NasError, ParetoPoint, discretize, expand_to_supernet,
                        expected_cost, mixture_forward, nas_loss, pareto_filter, pareto_flags, read_csv, sweep,
                        train_supernet)
from ppgnas.tensor import Tensor, float64_mode, gradcheck, ops
from ppgnas.training import prepare, target_offset


def one_conv(c_in, c_out, stride=1, k=3):
    return Graph((Node("c", conv(c_in, c_out, k, stride), (INPUT,)),), (c_in, 16), "c")


def tiny_task(n_subjects=12, seconds=10.0, target="sbp", family="resnet"):
    ws = windows_from_records(synth_generate(5, n_subjects, seconds))
    (sp,) = split_per_subject(ws.subjects, mode="holdout", seed=0)
    g = build_profile(family, "desk")
    tr = ws.subset(sp.train)
    off = target_offset(tr, target)
    data = [prepare(ws.subset(i), target, g.input_shape[-1], off) for i in (sp.train, sp.val, sp.test)]
    meta = {"target": target, "target_offset": off, "target_scale": 200.0}
    return g, meta, data


class TestExpand:
    def test_shape_preserving_gets_identity(self):
        sn = expand_to_supernet(one_conv(8, 8))
        assert sn.blocks["c"].labels == ("C", "DW", "ID")

    def test_shape_change_has_no_identity(self):
        sn = expand_to_supernet(one_conv(4, 8, stride=2))
        assert sn.blocks["c"].labels == ("C", "DW")

    def test_theta_starts_uniform(self):
        sn = expand_to_supernet(build_profile("resnet", "desk"))
        for b in sn.blocks.values():
            np.testing.assert_array_equal(b.theta.data, 0.0)
            assert abs(b.probs().sum() - 1) < 1e-6

    def test_no_conv_rejected(self):
        g = Graph((Node("r", LayerSpec("ReLU"), (INPUT,)),), (2, 8), "r")
        with pytest.raises(NasError, match="no Conv1d"):
            expand_to_supernet(g)

    def test_roundtrip_reproduces_seed(self):
        seed = Model.init(build_profile("resnet", "desk"), seed=3)
        sn = expand_to_supernet(seed)
        sn.set_selection({k: "C" for k in sn.blocks})
        child = discretize(sn)
        assert child.graph.nodes == seed.graph.nodes
        x = Tensor(np.random.default_rng(0).standard_normal((2, 1, 256)))
        np.testing.assert_array_equal(child(x).data, seed(x).data)


class TestMixture:
    def test_uniform_is_mean(self, rng):
        sn = expand_to_supernet(one_conv(8, 8))
        b = sn.blocks["c"]
        x = Tensor(rng.standard_normal((2, 8, 16)))
        from ppgnas.graph import apply_layer
        outs = [apply_layer(s, p, {}, [x]).data for s, p in zip(b.alternatives, b.alt_params)]
        np.testing.assert_allclose(mixture_forward(b, x).data, sum(outs) / 3, rtol=1e-5, atol=1e-6)

    def test_saturation(self, rng):
        sn = expand_to_supernet(one_conv(8, 8))
        b = sn.blocks["c"]
        b.theta.data = np.array([50.0, 0.0, 0.0], dtype=np.float32)
        x = Tensor(rng.standard_normal((2, 8, 16)))
        from ppgnas.graph import apply_layer
        y_c = apply_layer(b.alternatives[0], b.alt_params[0], {}, [x]).data
        np.testing.assert_allclose(mixture_forward(b, x).data, y_c, rtol=1e-6, atol=1e-6)

    def test_shape_mismatch(self, rng):
        b = expand_to_supernet(one_conv(8, 8)).blocks["c"]
        with pytest.raises(NasError):
            mixture_forward(b, Tensor(np.zeros((1, 4, 16))))

    def test_theta_gradient_finite_difference(self, rng):
        with float64_mode():
            b = expand_to_supernet(one_conv(3, 3)).blocks["c"]
            x = rng.standard_normal((2, 3, 16))

            def f(theta):
                b.theta = theta
                return mixture_forward(b, Tensor(x))

            err = gradcheck(f, [rng.standard_normal(3)])
        assert err < 1e-3


class TestCost:
    def block_with_costs(self):
        sn = expand_to_supernet(one_conv(4, 8))
        b = sn.blocks["c"]
        b.alternatives += (LayerSpec("Identity"),)
        b.labels += ("ID",)
        b.theta = Tensor(np.zeros(3), requires_grad=True)
        return sn

    def test_uniform_three_way(self):
        sn = self.block_with_costs()
        assert list(sn.blocks["c"].costs) == [104, 56, 0]
        assert expected_cost(sn).data == pytest.approx(160 / 3, abs=1e-9)

    def test_one_hot_on_dw(self):
        sn = self.block_with_costs()
        sn.set_selection({"c": "DW"})
        assert expected_cost(sn).data == 56

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_one_hot_matches_discretized_count(self, seed):
        rng = np.random.default_rng(seed)
        sn = expand_to_supernet(random_graph(rng), seed)
        sn.set_selection({k: int(rng.integers(len(b.alternatives))) for k, b in sn.blocks.items()})
        child = discretize(sn)
        assert expected_cost(sn).data == param_count(child.graph) == child.stored_scalars()

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_bounded_by_alternatives(self, seed):
        rng = np.random.default_rng(seed)
        sn = expand_to_supernet(random_graph(rng), seed)
        for b in sn.blocks.values():
            b.theta.data = rng.normal(0, 3, b.theta.shape).astype(np.float32)
        lo = sn.fixed_cost() + sum(b.costs.min() for b in sn.blocks.values())
        hi = sn.fixed_cost() + sum(b.costs.max() for b in sn.blocks.values())
        assert lo - 1e-6 <= expected_cost(sn).data <= hi + 1e-6

    def test_differentiable_in_theta(self, rng):
        sn = expand_to_supernet(one_conv(8, 8))
        expected_cost(sn).backward()
        g = sn.blocks["c"].theta.grad
        # d/dθ_i Σ p c = p_i (c_i - R)
        costs = sn.blocks["c"].costs
        np.testing.assert_allclose(g, (costs - costs.mean()) / 3, rtol=1e-5)


class TestLoss:
    def test_lambda_zero_is_mse(self):
        p, t = Tensor([[0.5], [1.0]]), np.array([[0.0], [0.0]])
        r = Tensor(np.float64(53.333))
        assert nas_loss(p, t, r, 0.0).data == ops.mse_loss(p, t).data

    def test_arithmetic(self):
        with float64_mode():
            p, t = Tensor([[1.0], [-1.0]]), np.zeros((2, 1))  # MSE = 1
            loss = nas_loss(p, t, Tensor(53.333), 1e-9)
        assert loss.data == pytest.approx(1 + 5.3333e-8, rel=1e-12)

    def test_zero_task_loss(self):
        with float64_mode():
            loss = nas_loss(Tensor([[2.0]]), np.array([[2.0]]), Tensor(53.333), 1e-7)
        assert loss.data == pytest.approx(5.3333e-6, rel=1e-12)

    def test_negative_lambda(self):
        with pytest.raises(NasError):
            nas_loss(Tensor([[0.0]]), np.zeros((1, 1)), Tensor(1.0), -1e-9)
        with pytest.raises(NasError):
            NasConfig(lam=-1)


class TestDiscretize:
    def test_argmax(self):
        sn = expand_to_supernet(one_conv(8, 8))
        sn.blocks["c"].theta.data = np.array([0.1, 2.0, -1.0], dtype=np.float32)
        assert discretize(sn).graph.nodes[0].spec.kind == "DWBlock"

    def test_tie_goes_to_cheapest(self):
        sn = expand_to_supernet(one_conv(4, 8, stride=2))
        assert sn.blocks["c"].selected() == 1  # C and DW tied at zero; DW is cheaper

    def test_identity_splices_block_out(self):
        g = Graph((Node("a", conv(2, 4, 3), (INPUT,)), Node("r1", LayerSpec("ReLU"), ("a",)),
                   Node("b", conv(4, 4, 3), ("r1",)), Node("r2", LayerSpec("ReLU"), ("b",)),
                   Node("o", conv(4, 1, 1, padding=0), ("r2",))), (2, 16), "o")
        sn = expand_to_supernet(g)
        sn.set_selection({"a": "C", "b": "ID", "o": "C"})
        child = discretize(sn)
        assert [n.id for n in child.graph.nodes] == ["a", "r1", "o"]
        assert child.graph.node("o").inputs == ("r1",)

    @given(shift=st.floats(-20, 20))
    def test_constant_shift_invariance(self, shift):
        sn = expand_to_supernet(one_conv(8, 8))
        b = sn.blocks["c"]
        b.theta.data = np.array([0.3, -0.2, 0.1], dtype=np.float32)
        before = b.selected()
        b.theta.data = b.theta.data + np.float32(shift)
        assert b.selected() == before or np.ptp(b.theta.data) == 0

    def test_inherits_trained_weights(self):
        sn = expand_to_supernet(one_conv(8, 8))
        sn.blocks["c"].alt_params[1]["pw_weight"].data[:] = 0.25
        sn.set_selection({"c": "DW"})
        np.testing.assert_array_equal(discretize(sn).params["c"]["pw_weight"].data, 0.25)


class TestTraining:
    def test_freezing_theta(self):
        g, meta, (tr, va, _) = tiny_task()
        sn = expand_to_supernet(Model.init(g, 0, meta))
        train_supernet(sn, tr, va, NasConfig(lam=1e-7, epochs=2, batch_size=32, freeze_theta=True))
        for b in sn.blocks.values():
            np.testing.assert_array_equal(b.theta.data, 0.0)

    def test_regularizer_dominated_selects_cheapest(self):
        g, meta, (tr, va, _) = tiny_task()
        sn = expand_to_supernet(Model.init(g, 0, meta))
        hist = train_supernet(sn, tr, va, NasConfig(lam=1.0, epochs=5, batch_size=32))
        for b in sn.blocks.values():
            assert b.costs[b.selected()] == b.costs.min()
            assert abs(b.probs().sum() - 1) < 1e-6
        assert hist[-1]["expected_cost"] < hist[0]["expected_cost"]

    def test_empty_split(self):
        g, meta, (tr, va, _) = tiny_task()
        sn = expand_to_supernet(g)
        empty = type(va)(va.x[:0], va.y[:0], va.sbp[:0], va.dbp[:0])
        with pytest.raises(NasError, match="non-empty"):
            train_supernet(sn, tr, empty, NasConfig(epochs=1))

    def test_nan_aborts(self):
        from ppgnas.tensor import NumericalError
        g, meta, (tr, va, _) = tiny_task()
        tr.x[0, 0, 0] = np.nan
        with pytest.raises(NumericalError, match="non-finite"):
            train_supernet(expand_to_supernet(g), tr, va, NasConfig(epochs=1))


class TestPareto:
    def test_dominance_example(self):
        pts = [ParetoPoint(0, 10, 10, 100, 0, 0), ParetoPoint(0, 9, 9, 200, 0, 0), ParetoPoint(0, 9.5, 9.5, 300, 0, 0)]
        front = pareto_filter(pts)
        assert [(p.params, p.mae_sbp) for p in front] == [(100, 10), (200, 9)]

    def test_single_point(self):
        assert len(pareto_filter([ParetoPoint(0, 1, 1, 5, 0, 0)])) == 1

    @given(pts=st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=25))
    @settings(max_examples=300)
    def test_matches_quadratic_oracle(self, pts):
        arr = np.array(pts, dtype=float)
        np.testing.assert_array_equal(pareto_flags(arr[:, 0], arr[:, 1]), pareto_quadratic(arr))

    def test_default_grid(self):
        lam = np.array(DEFAULT_LAMBDAS)
        assert lam.size == 18 and lam[0] == pytest.approx(1e-11) and lam[-1] == pytest.approx(1e-7)
        ratios = lam[1:] / lam[:-1]
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-9)


class TestSweep:
    def test_csv_and_resume(self, tmp_path):
        g, meta, (tr, va, te) = tiny_task(n_subjects=8, seconds=6.0)
        seed = Model.init(g, 0, meta)
        cfg = NasConfig(epochs=1, batch_size=64)
        path = tmp_path / "sweep.csv"
        pts = sweep(seed, tr, va, te, [1e-9, 1e-8], cfg, finetune_epochs=1, csv_path=path)
        rows = list(csv.DictReader(open(path)))
        assert len(rows) == 2 and list(rows[0]) == ["lambda", "params", "size_bytes", "macs", "mae_sbp", "mae_dbp",
                                                  "seed", "pareto"]
        assert rows[0]["mae_dbp"] == "nan"  # scalar SBP model says nothing about DBP
        again = sweep(seed, tr, va, te, [1e-9, 1e-8, 1e-7], cfg, finetune_epochs=1, csv_path=path)
        assert len(again) == 3 and [p.params for p in again[:2]] == [p.params for p in pts]
        assert len(read_csv(path)) == 3

    def test_workers_do_not_change_results(self, tmp_path):
        g, meta, (tr, va, te) = tiny_task(n_subjects=8, seconds=6.0)
        seed = Model.init(g, 0, meta)
        cfg = NasConfig(epochs=1, batch_size=64)
        serial = sweep(seed, tr, va, te, [1e-9, 1e-7], cfg, finetune_epochs=0, csv_path=tmp_path / "a.csv")
        parallel = sweep(seed, tr, va, te, [1e-9, 1e-7], cfg, finetune_epochs=0, csv_path=tmp_path / "b.csv",
                         workers=2)
        assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
        assert repr([p.row() for p in serial]) == repr([p.row() for p in parallel])  # nan-safe
