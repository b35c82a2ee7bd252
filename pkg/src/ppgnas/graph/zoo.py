"""Seed topologies: ResNet-like scalar regressor and UNet-like sig2sig model.

The exact layer hyperparameters of the published seeds are not available,
so the ``uci`` profiles are calibrated on parameter count only (~792k for
the ResNet, ~29.7k for the UNet).  ``desk`` profiles are small variants for
CPU-scale experiments.
"""
from __future__ import annotations

from .spec import INPUT, Graph, GraphError, LayerSpec, Node, conv

RESNET_PROFILES = {
    "uci": dict(input_len=625, blocks=1, base_channels=43, kernel_size=3),
    "desk": dict(input_len=256, blocks=1, base_channels=8, kernel_size=5, stages=2),
}

UNET_PROFILES = {
    "uci": dict(input_len=624, depth=3, base_channels=5, kernel_size=5),
    "desk": dict(input_len=256, depth=2, base_channels=4, kernel_size=5),
}


class GraphBuilder:
    def __init__(self, input_shape: tuple[int, ...], name: str = ""):
        self.input_shape = tuple(input_shape)
        self.name = name
        self.nodes: list[Node] = []

    def add(self, spec: LayerSpec, *inputs: str) -> str:
        node_id = f"n{len(self.nodes)}"
        self.nodes.append(Node(node_id, spec, tuple(inputs)))
        return node_id

    def conv_bn(self, x: str, c_in: int, c_out: int, k: int, stride: int = 1, relu: bool = True) -> str:
        x = self.add(conv(c_in, c_out, k, stride, bias=False), x)
        x = self.add(LayerSpec("BatchNorm", c_out, c_out), x)
        return self.add(LayerSpec("ReLU"), x) if relu else x

    def build(self, output: str) -> Graph:
        return Graph(tuple(self.nodes), self.input_shape, output, self.name)


def build_resnet1d(input_len: int = 625, blocks: int = 1, base_channels: int = 43, kernel_size: int = 3,
                   stages: int = 4, stem_kernel: int = 7, in_channels: int = 1) -> Graph:
    """Stem, ``stages`` residual stages doubling width, GAP + linear head to one scalar."""
    if input_len < 32:
        raise GraphError(f"resnet1d: input_len must be >= 32, got {input_len}")
    if blocks < 1 or stages < 1 or base_channels < 1:
        raise GraphError("resnet1d: blocks, stages and base_channels must be positive")
    b = GraphBuilder((in_channels, input_len), "resnet1d")
    x = b.conv_bn(INPUT, in_channels, base_channels, stem_kernel, stride=2)
    x = b.add(LayerSpec("MaxPool", k=2, stride=2), x)
    c = base_channels
    for s in range(stages):
        c_out = base_channels * 2 ** s
        for i in range(blocks):
            stride = 2 if s > 0 and i == 0 else 1
            h = b.conv_bn(x, c, c_out, kernel_size, stride)
            h = b.conv_bn(h, c_out, c_out, kernel_size, relu=False)
            skip = x
            if stride != 1 or c != c_out:
                skip = b.conv_bn(x, c, c_out, 1, stride, relu=False)
            x = b.add(LayerSpec("ReLU"), b.add(LayerSpec("Add"), h, skip))
            c = c_out
    x = b.add(LayerSpec("GlobalAvgPool"), x)
    out = b.add(LayerSpec("Linear", c, 1), x)
    return b.build(out)


def build_unet1d(input_len: int = 624, depth: int = 3, base_channels: int = 5, kernel_size: int = 5,
                 in_channels: int = 1) -> Graph:
    """Encoder (2x conv + pool per level), bottleneck, decoder with concat skips, 1-channel series out."""
    if depth < 1:
        raise GraphError("unet1d: depth must be >= 1")
    if input_len % (2 ** depth):
        raise GraphError(f"unet1d: input_len {input_len} not divisible by 2^{depth}")
    b = GraphBuilder((in_channels, input_len), "unet1d")
    k = kernel_size
    x, c, skips = INPUT, in_channels, []
    for i in range(depth):
        co = base_channels * 2 ** i
        x = b.conv_bn(b.conv_bn(x, c, co, k), co, co, k)
        skips.append((x, co))
        x = b.add(LayerSpec("MaxPool", k=2, stride=2), x)
        c = co
    co = base_channels * 2 ** depth
    x = b.conv_bn(b.conv_bn(x, c, co, k), co, co, k)
    c = co
    for skip, cs in reversed(skips):
        x = b.add(LayerSpec("Upsample", factor=2), x)
        x = b.conv_bn(x, c, cs, k)
        x = b.add(LayerSpec("Concat"), x, skip)
        x = b.conv_bn(b.conv_bn(x, 2 * cs, cs, k), cs, cs, k)
        c = cs
    out = b.add(conv(c, 1, 1), x)
    return b.build(out)


def build_profile(family: str, profile: str = "uci", **overrides) -> Graph:
    table = {"resnet": (RESNET_PROFILES, build_resnet1d), "unet": (UNET_PROFILES, build_unet1d)}
    if family not in table:
        raise GraphError(f"unknown seed family {family!r} (expected resnet or unet)")
    profiles, builder = table[family]
    if profile not in profiles:
        raise GraphError(f"unknown {family} profile {profile!r}; available: {sorted(profiles)}")
    return builder(**{**profiles[profile], **overrides})
