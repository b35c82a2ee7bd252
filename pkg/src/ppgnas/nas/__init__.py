"""Differentiable architecture search over conv positions with a size regularizer."""
from .supernet import (ChoiceBlock, NasError, SuperNet, discretize, expand_to_supernet, expected_cost,
                       mixture_forward, nas_loss)
from .sweep import (CSV_COLUMNS, DEFAULT_LAMBDAS, ParetoPoint, pareto_filter, pareto_flags, read_csv, run_lambda,
                    sweep, write_csv)
from .train import NasConfig, train_supernet, val_mse

__all__ = [
    "CSV_COLUMNS", "ChoiceBlock", "DEFAULT_LAMBDAS", "NasConfig", "NasError", "ParetoPoint", "SuperNet",
    "discretize", "expand_to_supernet", "expected_cost", "mixture_forward", "nas_loss", "pareto_filter",
    "pareto_flags", "read_csv", "run_lambda", "sweep", "train_supernet", "val_mse", "write_csv",
]
