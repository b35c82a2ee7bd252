"""Int8 quantization: affine weight grids, PaCT activations, QAT and integer export."""
from .export import export_int_graph
from .fakequant import ALPHA_FLOOR, fake_quant, fake_quant_bias, pact, pact_params
from .params import (QMAX, QMIN, QuantError, QuantParams, encode_multiplier, minmax_affine_params, requantize,
                     rounding_shift)
from .qmodel import ActQuant, QLayer, QModel, lower, qat_finetune

__all__ = [
    "ALPHA_FLOOR", "ActQuant", "QLayer", "QMAX", "QMIN", "QModel", "QuantError", "QuantParams", "encode_multiplier",
    "export_int_graph", "fake_quant", "fake_quant_bias", "lower", "minmax_affine_params", "pact", "pact_params",
    "qat_finetune", "requantize", "rounding_shift",
]
