"""Hand-built traces that isolate one mechanism each, plus the standard
seven-workload matrix used for classification sweeps."""

from __future__ import annotations

import random

from .generators import LayerSpec, generate
from .trace import LINE_BYTES, KernelMarker, Kind, MemAccess, Scope, Trace, concat

FAR_BASE = 1 << 27  # above every generator layout


def matrix(seed: int = 0) -> dict:
    """One representative spec per layer kind, keyed by workload name."""
    specs = [
        LayerSpec("streaming", (262144,), seed=seed),
        LayerSpec("fully_connected", (256, 256), batch=8, seed=seed),
        LayerSpec("pooling", (64, 64, 4, 2, 2), seed=seed),
        LayerSpec("gemm_tiled", (64, 64, 256, 32), seed=seed),
        LayerSpec("rnn", (128, 4), seed=seed),
        LayerSpec("lrn_neighbor", (64, 64, 16, 5), seed=seed),
        LayerSpec("softmax_small", (1000,), batch=64, seed=seed),
    ]
    return {s.layer_kind.value: s for s in specs}


def busy_set_trace(num_cus: int = 8, per_cu: int = 64, l2_sets: int = 4096,
                   base: int = FAR_BASE) -> Trace:
    """Every CU loads distinct lines that all fall in one L1 set and one L2
    set (set ``cu``), so each set's ways are all Busy once ``ways`` misses
    are in flight."""
    items = []
    seq = 0
    for j in range(per_cu):
        for cu in range(num_cus):
            line = cu + l2_sets * j
            items.append(MemAccess(seq, 0x100, base + line * LINE_BYTES, LINE_BYTES,
                                   Kind.LOAD, cu, 0))
            seq += 1
    items.append(KernelMarker(0, Scope.SYSTEM))
    return Trace(items, {"generator": "busy_set"})


def scattered_store_trace(nlines: int = 81920, num_cus: int = 64, seed: int = 0,
                          base: int = FAR_BASE) -> Trace:
    """One full-line store to each of ``nlines`` lines in shuffled order.
    Larger than the L2, so dirty lines get evicted while their rows still
    hold other dirty lines."""
    rng = random.Random(seed)
    order = list(range(nlines))
    rng.shuffle(order)
    items = [MemAccess(i, 0x300, base + line * LINE_BYTES, LINE_BYTES, Kind.STORE,
                       i % num_cus, 0) for i, line in enumerate(order)]
    items.append(KernelMarker(0, Scope.SYSTEM))
    return Trace(items, {"generator": "scattered_store"})


def repeated_store_trace(lines_per_cu: int = 64, stores_per_line: int = 4,
                         num_cus: int = 64, base: int = FAR_BASE) -> Trace:
    """Each CU fills its own lines with ``stores_per_line`` element stores
    per line, in address order."""
    width = LINE_BYTES // stores_per_line
    items = []
    seq = 0
    for cu in range(num_cus):
        for k in range(lines_per_cu):
            line = base + (cu * lines_per_cu + k) * LINE_BYTES
            for s in range(stores_per_line):
                items.append(MemAccess(seq, 0x400, line + s * width, width,
                                       Kind.STORE, cu, 0))
                seq += 1
    items.append(KernelMarker(0, Scope.SYSTEM))
    return Trace(items, {"generator": "repeated_store"})


MIXED_STREAM_PC = 0x1000
MIXED_FC_PC = 0x2000


def mixed_trace(rounds: int = 2, stream_elems: int = 131072) -> Trace:
    """Alternating streaming and fully connected kernels with disjoint PCs."""
    parts = []
    for _ in range(rounds):
        parts.append(generate(LayerSpec("streaming", (stream_elems,), seed=1,
                                        pc_base=MIXED_STREAM_PC)))
        parts.append(generate(LayerSpec("fully_connected", (256, 256), batch=8,
                                        seed=2, pc_base=MIXED_FC_PC)))
    return concat(parts, "mixed")


def random_trace(n: int, seed: int, num_cus: int = 8, kernels: int = 3,
                 lines: int = 512, base: int = FAR_BASE) -> Trace:
    """Random loads and stores, data-race free: within a kernel a line is
    written by at most one CU, and only that CU touches it.  Ends in a
    system-scope marker."""
    rng = random.Random(seed)
    items = []
    seq = 0
    per = -(-n // kernels)
    for k in range(kernels):
        owner = {}
        for _ in range(min(per, n - seq)):
            cu = rng.randrange(num_cus)
            line = rng.randrange(lines)
            if owner.setdefault(line, cu) != cu:
                cu = owner[line]
            size = rng.choice((1, 2, 4, 8, 16, 32, 64))
            off = rng.randrange(0, LINE_BYTES - size + 1)
            kind = Kind.STORE if rng.random() < 0.4 else Kind.LOAD
            pc = 0x500 + 4 * rng.randrange(8)
            items.append(MemAccess(seq, pc, base + line * LINE_BYTES + off, size, kind, cu, k))
            seq += 1
        items.append(KernelMarker(k, Scope.SYSTEM if k == kernels - 1 else Scope.KERNEL))
    return Trace(items, {"generator": "random", "seed": seed})
