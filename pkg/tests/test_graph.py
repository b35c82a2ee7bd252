import numpy as np
import pytest

from ppgnas.graph import (Graph, GraphError, LayerSpec, Model, Node, build_profile, build_resnet1d, build_unet1d,
                          conv, dw_block, layer_param_count, load_model, mac_count, model_from_bytes, model_to_bytes,
                          param_count, save_model)
from ppgnas.graph.serialize import FormatError
from ppgnas.tensor import Tensor


def closed_form_resnet(base, k, input_channels=1, stem_k=7, stages=4):
    # hand-derived per-layer sum for blocks=1 (independent of the graph walker)
    total = input_channels * base * stem_k + 2 * base  # stem conv (no bias) + BN
    c = base
    for s in range(stages):
        co = base * 2 ** s
        total += c * co * k + 2 * co + co * co * k + 2 * co
        if s > 0:
            total += c * co + 2 * co  # 1x1 projection + BN
        c = co
    return total + c + 1  # linear head


class TestParamCount:
    def test_conv_formula(self):
        assert layer_param_count(conv(4, 8, 3)) == 104

    def test_dw_formula(self):
        assert layer_param_count(dw_block(4, 8, 3)) == 56

    def test_identity_is_free(self):
        assert layer_param_count(LayerSpec("Identity")) == 0

    def test_small_resnet_closed_form(self):
        g = build_resnet1d(input_len=64, blocks=1, base_channels=4)
        assert param_count(g) == closed_form_resnet(4, 3)

    @pytest.mark.parametrize("family,profile", [("resnet", "uci"), ("resnet", "desk"), ("unet", "uci"),
                                                ("unet", "desk")])
    def test_enumeration_oracle(self, family, profile):
        g = build_profile(family, profile)
        assert param_count(g) == Model.init(g, 0).stored_scalars()

    def test_uci_anchors(self):
        assert abs(param_count(build_profile("resnet", "uci")) / 792e3 - 1) <= 0.05
        assert abs(param_count(build_profile("unet", "uci")) / 29.7e3 - 1) <= 0.05

    @pytest.mark.parametrize("c_in,c_out,k,stride", [(8, 8, 3, 1), (8, 16, 3, 2), (16, 16, 5, 1), (4, 8, 7, 2),
                                                     (43, 43, 3, 1), (5, 10, 5, 1)])
    def test_dw_cheaper_than_conv_on_pool_geometries(self, c_in, c_out, k, stride):
        assert layer_param_count(dw_block(c_in, c_out, k, stride)) < layer_param_count(conv(c_in, c_out, k, stride))

    def test_macs_single_conv(self):
        g = Graph((Node("a", conv(1, 1, 3, padding=0), ("input",)),), (1, 12), "a")
        assert mac_count(g) == 30


class TestShapes:
    @pytest.mark.parametrize("length", [32, 64, 100, 625])
    def test_resnet_emits_one_scalar(self, length):
        g = build_resnet1d(input_len=length, blocks=1, base_channels=4)
        m = Model.init(g, 0)
        assert m(Tensor(np.zeros((2, 1, length)))).shape == (2, 1)

    def test_resnet_rejects_short_input(self):
        with pytest.raises(GraphError):
            build_resnet1d(input_len=16)

    def test_collapsing_geometry_rejected(self):
        with pytest.raises(GraphError, match="non-positive"):
            Graph((Node("a", conv(1, 2, 9, padding=0), ("input",)),), (1, 8), "a")

    def test_unet_shape_contract(self):
        g = build_unet1d(input_len=8, depth=1, base_channels=2, kernel_size=3)
        assert Model.init(g, 0)(Tensor(np.zeros((3, 1, 8)))).shape == (3, 1, 8)

    def test_unet_rejects_indivisible_length(self):
        with pytest.raises(GraphError, match="divisible"):
            build_unet1d(input_len=625, depth=3)

    @pytest.mark.parametrize("depth", [1, 2, 3])
    def test_unet_encoder_lengths(self, depth):
        g = build_unet1d(input_len=96 * 2, depth=depth, base_channels=2, kernel_size=3)
        pools = [n for n in g.nodes if n.spec.kind == "MaxPool"]
        for i, p in enumerate(pools):
            assert g.shapes[p.inputs[0]][1] == 192 // 2 ** i

    def test_cycle_or_dangling_edge_rejected(self):
        with pytest.raises(GraphError):
            Graph((Node("a", LayerSpec("ReLU"), ("b",)), Node("b", LayerSpec("ReLU"), ("a",))), (1, 4), "b")

    def test_identity_needs_equal_shapes(self):
        with pytest.raises(GraphError):
            Graph((Node("a", LayerSpec("Identity", 2, 4), ("input",)),), (2, 4), "a")


class TestSerialization:
    def test_bit_exact_roundtrip(self, tmp_path):
        m = Model.init(build_profile("unet", "desk"), seed=3, meta={"target": "sig2sig"})
        m.buffers["n1"]["running_var"][:] = np.float32(1.2345678)
        save_model(m, tmp_path / "m.ppgm")
        back = load_model(tmp_path / "m.ppgm")
        assert back.graph == m.graph and back.meta == m.meta
        for nid in m.params:
            for k, t in m.params[nid].items():
                assert t.data.tobytes() == back.params[nid][k].data.tobytes()
            for k, b in m.buffers[nid].items():
                assert b.tobytes() == back.buffers[nid][k].tobytes()

    def test_header_is_versioned_little_endian(self):
        blob = model_to_bytes(build_profile("resnet", "desk"))
        assert blob[:8] == b"PPGNASG\0"
        assert int.from_bytes(blob[8:12], "little") == 1

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            model_from_bytes(b"garbage!" + bytes(16))

    def test_newer_version_rejected(self):
        blob = bytearray(model_to_bytes(build_profile("resnet", "desk")))
        blob[8:12] = (99).to_bytes(4, "little")
        with pytest.raises(FormatError, match="newer"):
            model_from_bytes(bytes(blob))
