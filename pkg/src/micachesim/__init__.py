"""Trace-driven simulator of a GPU cache hierarchy under MI-style workloads."""

from .config import SimConfig, load_config, parse_config
from .cache import Cache, CacheConfig, Result, State, WritePolicy
from .dram import Dram, DramConfig, map_address, row_of
from .engine import (
    PRESETS,
    SWEEP_CELLS,
    Engine,
    EngineConfig,
    Policy,
    PolicyConfig,
    RunStats,
    route,
    run,
)
from .generators import LayerKind, LayerSpec, footprint_lines, generate
from .report import Category, SweepResult, classify, emit_chart, emit_csv, normalize
from .sweep import CellFailed
from .trace import KernelMarker, Kind, MemAccess, Scope, Trace, read_trace, write_trace

__version__ = "0.1.0"
