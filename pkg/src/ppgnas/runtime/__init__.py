"""Integer inference: IntGraph format, reference interpreter, memory model and C emitter."""
from .codegen import compile_and_run, emit_c, find_compiler, write_c
from .interp import run, run_layer
from .intgraph import INTGRAPH_MAGIC, IntGraph, IntGraphError, IntLayer
from .memory import (DEFAULT_BUDGET, RUNTIME_OVERHEAD, ArenaPlan, MemoryReport, int_mac_count, memory_report,
                     plan_arena, weight_bytes)

__all__ = [
    "ArenaPlan", "DEFAULT_BUDGET", "INTGRAPH_MAGIC", "IntGraph", "IntGraphError", "IntLayer", "MemoryReport",
    "RUNTIME_OVERHEAD", "compile_and_run", "emit_c", "find_compiler", "int_mac_count", "memory_report",
    "plan_arena", "run", "run_layer", "weight_bytes", "write_c",
]
