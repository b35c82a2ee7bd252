"""Layer graphs, seed builders, float execution and checkpoints."""
from .model import Model, apply_layer, execute
from .randgraph import random_graph
from .serialize import FormatError, load_graph, load_model, model_from_bytes, model_to_bytes, save_model
from .spec import (INPUT, KINDS, Graph, GraphError, LayerSpec, Node, conv, dw_block, foldable_batchnorms,
                   int8_size_bytes, layer_macs, layer_param_count, mac_count, output_shape, param_count,
                   param_shapes)
from .zoo import RESNET_PROFILES, UNET_PROFILES, GraphBuilder, build_profile, build_resnet1d, build_unet1d

__all__ = [
    "INPUT", "KINDS", "FormatError", "Graph", "GraphBuilder", "GraphError", "LayerSpec", "Model", "Node",
    "RESNET_PROFILES", "UNET_PROFILES", "apply_layer", "build_profile", "build_resnet1d", "build_unet1d", "conv",
    "dw_block", "execute", "foldable_batchnorms", "int8_size_bytes", "layer_macs", "layer_param_count",
    "load_graph", "load_model", "mac_count", "model_from_bytes", "model_to_bytes", "output_shape", "param_count",
    "param_shapes", "random_graph", "save_model",
]
