"""Synthetic layer generators.

Each generator lays tensors out row-major, one after another, each starting on
a 4 KiB boundary.  The seed picks a random 2 MiB-aligned base (large-page
alignment, as a GPU allocator would give) for the whole layout and a random
assignment of work units to CUs; the reuse structure of a layer does not
depend on it.

Requests are emitted at cache-line granularity (one record per line touched
by a vector access) except for pooling and the scalar output stores of the
fully connected and recurrent layers, which are element-sized.
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field

from .trace import (
    LINE_BYTES,
    EmptySpec,
    FootprintTooLarge,
    InvalidSpec,
    KernelMarker,
    Kind,
    MemAccess,
    Scope,
    Trace,
)

PAGE = 4096
LARGE_PAGE = 2 << 20
DEFAULT_MAX_FOOTPRINT = 1 << 30


class LayerKind(str, enum.Enum):
    STREAMING = "streaming"
    POOLING = "pooling"
    FULLY_CONNECTED = "fully_connected"
    GEMM_TILED = "gemm_tiled"
    RNN = "rnn"
    LRN_NEIGHBOR = "lrn_neighbor"
    SOFTMAX_SMALL = "softmax_small"


@dataclass(frozen=True)
class LayerSpec:
    layer_kind: LayerKind
    dims: tuple
    element_bytes: int = 4
    batch: int = 1
    seed: int = 0
    num_cus: int = 64
    pc_base: int = 0x1000
    lds_filter: float = 1.0
    max_footprint: int = DEFAULT_MAX_FOOTPRINT
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layer_kind", LayerKind(self.layer_kind))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.element_bytes not in (4, 8):
            raise InvalidSpec(f"element_bytes must be 4 or 8, got {self.element_bytes}")
        if self.batch < 1:
            raise InvalidSpec(f"batch must be >= 1, got {self.batch}")
        if not 1 <= self.num_cus <= 256:
            raise InvalidSpec(f"num_cus must be in [1, 256], got {self.num_cus}")
        if not 0.0 <= self.lds_filter <= 1.0:
            raise InvalidSpec("lds_filter must be a fraction")

    def params(self) -> dict:
        return {
            "layer_kind": self.layer_kind.value,
            "dims": list(self.dims),
            "element_bytes": self.element_bytes,
            "batch": self.batch,
            "seed": self.seed,
            "num_cus": self.num_cus,
            "pc_base": self.pc_base,
            "lds_filter": self.lds_filter,
        }


def _lines(nbytes: int) -> int:
    return -(-nbytes // LINE_BYTES)


class _Layout:
    def __init__(self, base: int):
        self.next = base

    def alloc(self, nbytes: int) -> int:
        addr = self.next
        self.next = addr + -(-max(nbytes, 1) // PAGE) * PAGE
        return addr


class _Builder:
    """Collects per-CU request lists per kernel and interleaves them."""

    def __init__(self, spec: LayerSpec):
        self.spec = spec
        rng = random.Random(spec.seed)
        self.base = rng.randrange(0, 32) * LARGE_PAGE
        self.cu_of = list(range(spec.num_cus))
        rng.shuffle(self.cu_of)
        self.rng = rng
        self.layout = _Layout(self.base)
        self.kernels: list = []
        self.new_kernel()

    def new_kernel(self):
        self.cur = [[] for _ in range(self.spec.num_cus)]
        self.kernels.append(self.cur)

    def unit_cu(self, unit: int) -> int:
        return self.cu_of[unit % self.spec.num_cus]

    def load(self, cu, pc, addr, size):
        self.cur[cu].append((pc, addr, size, Kind.LOAD))

    def store(self, cu, pc, addr, size):
        self.cur[cu].append((pc, addr, size, Kind.STORE))

    def load_range(self, cu, pc, addr, nbytes):
        _range(self.cur[cu], pc, addr, nbytes, Kind.LOAD)

    def store_range(self, cu, pc, addr, nbytes):
        _range(self.cur[cu], pc, addr, nbytes, Kind.STORE)

    def build(self, name: str) -> Trace:
        items = []
        seq = 0
        last = len(self.kernels) - 1
        for kid, per_cu in enumerate(self.kernels):
            longest = max((len(q) for q in per_cu), default=0)
            for k in range(longest):
                for cu, q in enumerate(per_cu):
                    if k < len(q):
                        pc, addr, size, kind = q[k]
                        items.append(MemAccess(seq, pc, addr, size, kind, cu, kid))
                        seq += 1
            scope = Scope.SYSTEM if kid == last else Scope.KERNEL
            items.append(KernelMarker(kid, scope))
        return Trace(items, {"generator": name, "params": self.spec.params()})


def _range(q, pc, addr, nbytes, kind):
    end = addr + nbytes
    while addr < end:
        stop = min(end, (addr // LINE_BYTES + 1) * LINE_BYTES)
        q.append((pc, addr, stop - addr, kind))
        addr = stop


def _require(spec: LayerSpec, kind: LayerKind, arity: int):
    if spec.layer_kind != kind:
        raise InvalidSpec(f"expected a {kind.value} spec, got {spec.layer_kind.value}")
    if len(spec.dims) != arity:
        raise InvalidSpec(f"{kind.value} takes {arity} dimensions, got {len(spec.dims)}")


def _check_footprint(spec: LayerSpec, nbytes: int):
    if nbytes > spec.max_footprint:
        raise FootprintTooLarge(
            f"{nbytes} bytes exceeds the configured maximum of {spec.max_footprint}")


def gen_streaming(spec: LayerSpec) -> Trace:
    """Elementwise layer: each CU streams a contiguous chunk, one load and one
    store per line."""
    _require(spec, LayerKind.STREAMING, 1)
    (n,) = spec.dims
    if n <= 0:
        raise EmptySpec("streaming layer with no elements")
    eb = spec.element_bytes
    nbytes = n * eb
    _check_footprint(spec, 2 * nbytes)
    b = _Builder(spec)
    src = b.layout.alloc(nbytes)
    dst = b.layout.alloc(nbytes)
    nlines = _lines(nbytes)
    chunk = -(-nlines // spec.num_cus)
    for unit in range(spec.num_cus):
        cu = b.unit_cu(unit)
        for i in range(unit * chunk, min(nlines, (unit + 1) * chunk)):
            size = min(LINE_BYTES, nbytes - i * LINE_BYTES)
            b.load(cu, spec.pc_base, src + i * LINE_BYTES, size)
            b.store(cu, spec.pc_base + 4, dst + i * LINE_BYTES, size)
    return b.build("streaming")


def gen_fully_connected(spec: LayerSpec) -> Trace:
    """Matrix-vector product per batch item.

    Output neurons (weight rows) are dealt round-robin to CUs.  For every batch
    item a CU loads the whole input vector, then each of its weight rows,
    storing one output element per row.  Weight lines are therefore loaded
    exactly ``batch`` times, by the same CU.
    """
    _require(spec, LayerKind.FULLY_CONNECTED, 2)
    n_in, n_out = spec.dims
    if n_in <= 0 or n_out <= 0:
        raise EmptySpec("fully connected layer with an empty dimension")
    eb = spec.element_bytes
    row = n_in * eb
    if row % LINE_BYTES:
        raise InvalidSpec("n_in * element_bytes must be a multiple of the line size")
    _check_footprint(spec, n_in * n_out * eb)
    b = _Builder(spec)
    w = b.layout.alloc(n_out * row)
    x = b.layout.alloc(spec.batch * row)
    y = b.layout.alloc(spec.batch * n_out * eb)
    pc_w, pc_x, pc_y = spec.pc_base, spec.pc_base + 4, spec.pc_base + 8
    rows_of = [[] for _ in range(spec.num_cus)]
    for j in range(n_out):
        rows_of[j % spec.num_cus].append(j)
    for unit, rows in enumerate(rows_of):
        if not rows:
            continue
        cu = b.unit_cu(unit)
        for item in range(spec.batch):
            b.load_range(cu, pc_x, x + item * row, row)
            for j in rows:
                b.load_range(cu, pc_w, w + j * row, row)
                b.store(cu, pc_y, y + (item * n_out + j) * eb, eb)
    return b.build("fully_connected")


def gen_pooling(spec: LayerSpec) -> Trace:
    """Window pooling, element-sized requests: window**2 loads per stored output."""
    _require(spec, LayerKind.POOLING, 5)
    width, height, channels, window, stride = spec.dims
    if window <= 0 or stride <= 0:
        raise InvalidSpec("window and stride must be positive")
    if width <= 0 or height <= 0 or channels <= 0:
        raise EmptySpec("pooling layer with an empty dimension")
    if window > width or window > height:
        raise InvalidSpec("window larger than the input plane")
    eb = spec.element_bytes
    ow = (width - window) // stride + 1
    oh = (height - window) // stride + 1
    _check_footprint(spec, (width * height + ow * oh) * channels * eb)
    b = _Builder(spec)
    src = b.layout.alloc(width * height * channels * eb)
    dst = b.layout.alloc(ow * oh * channels * eb)
    pc_in, pc_out = spec.pc_base, spec.pc_base + 4
    n_out = ow * oh * channels
    chunk = -(-n_out // spec.num_cus)
    for unit in range(spec.num_cus):
        cu = b.unit_cu(unit)
        for o in range(unit * chunk, min(n_out, (unit + 1) * chunk)):
            c, rem = divmod(o, ow * oh)
            oy, ox = divmod(rem, ow)
            plane = src + c * width * height * eb
            for ky in range(window):
                rowaddr = plane + ((oy * stride + ky) * width + ox * stride) * eb
                for kx in range(window):
                    b.load(cu, pc_in, rowaddr + kx * eb, eb)
            b.store(cu, pc_out, dst + o * eb, eb)
    return b.build("pooling")


def gen_gemm_tiled(spec: LayerSpec) -> Trace:
    """Tiled C = A @ B with LDS-resident tiles.

    Work-groups own one C tile and walk the K dimension, loading one A tile and
    one B tile per step.  Re-reads inside a work-group are served by LDS and
    left out of the trace; ``lds_filter < 1`` puts back a seeded random subset
    of them as a second load of the same line.  Work-groups are ordered column
    panel by column panel, so consecutive work-groups share B panels.
    """
    _require(spec, LayerKind.GEMM_TILED, 4)
    m, n, k, t = spec.dims
    if min(m, n, k, t) <= 0:
        raise InvalidSpec("gemm dimensions must be positive")
    if m % t or n % t or k % t:
        raise InvalidSpec("tile must divide M, N and K")
    eb = spec.element_bytes
    if (t * eb) % LINE_BYTES:
        raise InvalidSpec("tile * element_bytes must be a multiple of the line size")
    _check_footprint(spec, (m * k + k * n + m * n) * eb)
    b = _Builder(spec)
    a_base = b.layout.alloc(m * k * eb)
    b_base = b.layout.alloc(k * n * eb)
    c_base = b.layout.alloc(m * n * eb)
    pc_a, pc_b, pc_c = spec.pc_base, spec.pc_base + 4, spec.pc_base + 8
    reload = 1.0 - spec.lds_filter
    rng = b.rng

    def tile_lines(base, ld, r0, c0):
        for r in range(r0, r0 + t):
            start = base + (r * ld + c0) * eb
            for off in range(0, t * eb, LINE_BYTES):
                yield start + off

    wg = 0
    for tj in range(n // t):
        for ti in range(m // t):
            cu = b.unit_cu(wg)
            wg += 1
            for tk in range(k // t):
                for pc, lines in ((pc_a, tile_lines(a_base, k, ti * t, tk * t)),
                                  (pc_b, tile_lines(b_base, n, tk * t, tj * t))):
                    for addr in lines:
                        b.load(cu, pc, addr, LINE_BYTES)
                        if reload and rng.random() < reload:
                            b.load(cu, pc, addr, LINE_BYTES)
            for addr in tile_lines(c_base, n, ti * t, tj * t):
                b.store(cu, pc_c, addr, LINE_BYTES)
    return b.build("gemm_tiled")


def gen_rnn(spec: LayerSpec) -> Trace:
    """LSTM-style recurrence: one kernel per time step, four gate matrices.

    Each step loads the previous hidden state for every batch item, reloads all
    of its weight rows (weight sharing across steps) and stores one gate
    pre-activation per (row, batch item).  Steps are separated by kernel
    markers; the last marker is system scope.
    """
    _require(spec, LayerKind.RNN, 2)
    hidden, seq_len = spec.dims
    if seq_len <= 0:
        raise EmptySpec("rnn with zero time steps")
    if hidden <= 0:
        raise InvalidSpec("hidden size must be positive")
    eb = spec.element_bytes
    row = hidden * eb
    if row % LINE_BYTES:
        raise InvalidSpec("hidden * element_bytes must be a multiple of the line size")
    gates = 4
    _check_footprint(spec, gates * hidden * row)
    b = _Builder(spec)
    w = b.layout.alloc(gates * hidden * row)
    h = b.layout.alloc(seq_len * spec.batch * row)
    g = b.layout.alloc(seq_len * spec.batch * gates * row)
    pc_w, pc_h, pc_g = spec.pc_base, spec.pc_base + 4, spec.pc_base + 8
    rows_of = [[] for _ in range(spec.num_cus)]
    for r in range(gates * hidden):
        rows_of[r % spec.num_cus].append(r)
    for step in range(seq_len):
        if step:
            b.new_kernel()
        for unit, rows in enumerate(rows_of):
            if not rows:
                continue
            cu = b.unit_cu(unit)
            b.load_range(cu, pc_h, h + step * spec.batch * row, spec.batch * row)
            for r in rows:
                b.load_range(cu, pc_w, w + r * row, row)
                for item in range(spec.batch):
                    out = ((step * spec.batch + item) * gates * hidden + r) * eb
                    b.store(cu, pc_g, g + out, eb)
    return b.build("rnn")


def gen_lrn_neighbor(spec: LayerSpec) -> Trace:
    """Cross-channel local response normalization on line-wide vectors.

    Spatial line positions are split into contiguous chunks per CU; each CU
    walks channels innermost, so an input line is re-read by ``window``
    neighbouring outputs within a short span of the same CU's stream.
    """
    _require(spec, LayerKind.LRN_NEIGHBOR, 4)
    width, height, channels, window = spec.dims
    if min(width, height, channels) <= 0:
        raise EmptySpec("lrn layer with an empty dimension")
    if window <= 0 or window % 2 == 0:
        raise InvalidSpec("lrn window must be a positive odd number")
    eb = spec.element_bytes
    if (width * eb) % LINE_BYTES:
        raise InvalidSpec("width * element_bytes must be a multiple of the line size")
    plane = width * height * eb
    _check_footprint(spec, 2 * plane * channels)
    b = _Builder(spec)
    src = b.layout.alloc(plane * channels)
    dst = b.layout.alloc(plane * channels)
    pc_in, pc_out = spec.pc_base, spec.pc_base + 4
    half = window // 2
    npos = plane // LINE_BYTES
    chunk = -(-npos // spec.num_cus)
    for unit in range(spec.num_cus):
        cu = b.unit_cu(unit)
        for p in range(unit * chunk, min(npos, (unit + 1) * chunk)):
            off = p * LINE_BYTES
            for c in range(channels):
                for cc in range(max(0, c - half), min(channels, c + half + 1)):
                    b.load(cu, pc_in, src + cc * plane + off, LINE_BYTES)
                b.store(cu, pc_out, dst + c * plane + off, LINE_BYTES)
    return b.build("lrn_neighbor")


def gen_softmax_small(spec: LayerSpec) -> Trace:
    """Row softmax over ``batch`` rows: max pass, sum pass, normalized store."""
    _require(spec, LayerKind.SOFTMAX_SMALL, 1)
    (n,) = spec.dims
    if n <= 0:
        raise EmptySpec("softmax over zero classes")
    eb = spec.element_bytes
    row = n * eb
    _check_footprint(spec, 2 * row * spec.batch)
    b = _Builder(spec)
    src = b.layout.alloc(row * spec.batch)
    dst = b.layout.alloc(row * spec.batch)
    for item in range(spec.batch):
        cu = b.unit_cu(item)
        b.load_range(cu, spec.pc_base, src + item * row, row)
        b.load_range(cu, spec.pc_base + 4, src + item * row, row)
        b.store_range(cu, spec.pc_base + 8, dst + item * row, row)
    return b.build("softmax_small")


GENERATORS = {
    LayerKind.STREAMING: gen_streaming,
    LayerKind.POOLING: gen_pooling,
    LayerKind.FULLY_CONNECTED: gen_fully_connected,
    LayerKind.GEMM_TILED: gen_gemm_tiled,
    LayerKind.RNN: gen_rnn,
    LayerKind.LRN_NEIGHBOR: gen_lrn_neighbor,
    LayerKind.SOFTMAX_SMALL: gen_softmax_small,
}


def generate(spec: LayerSpec) -> Trace:
    return GENERATORS[spec.layer_kind](spec)


def footprint_lines(spec: LayerSpec) -> int:
    """Distinct cache lines a generated trace touches, from the spec alone.

    Tensors start on 4 KiB boundaries, so every region begins on a line
    boundary and its line count is a ceiling division.
    """
    eb = spec.element_bytes
    d = spec.dims
    kind = spec.layer_kind
    if kind == LayerKind.STREAMING:
        return 2 * _lines(d[0] * eb)
    if kind == LayerKind.FULLY_CONNECTED:
        n_in, n_out = d
        return (_lines(n_in * n_out * eb) + _lines(spec.batch * n_in * eb)
                + _lines(spec.batch * n_out * eb))
    if kind == LayerKind.GEMM_TILED:
        m, n, k, _ = d
        return _lines(m * k * eb) + _lines(k * n * eb) + _lines(m * n * eb)
    if kind == LayerKind.RNN:
        hidden, seq_len = d
        row = hidden * eb
        return (_lines(4 * hidden * row) + _lines(seq_len * spec.batch * row)
                + _lines(seq_len * spec.batch * 4 * row))
    if kind == LayerKind.LRN_NEIGHBOR:
        width, height, channels, _ = d
        return 2 * _lines(width * height * channels * eb)
    if kind == LayerKind.SOFTMAX_SMALL:
        return 2 * _lines(d[0] * eb * spec.batch)
    if kind == LayerKind.POOLING:
        return _pooling_footprint(spec)
    raise InvalidSpec(f"unknown layer kind {kind}")


def _pooling_footprint(spec: LayerSpec) -> int:
    width, height, channels, window, stride = spec.dims
    eb = spec.element_bytes
    ow = (width - window) // stride + 1
    oh = (height - window) // stride + 1
    xs = sorted({ox * stride + kx for ox in range(ow) for kx in range(window)})
    ys = {oy * stride + ky for oy in range(oh) for ky in range(window)}
    # rows narrower than a line share lines, so count over one set
    touched = {((c * height + y) * width + x) * eb // LINE_BYTES
               for c in range(channels) for y in ys for x in xs}
    return len(touched) + _lines(ow * oh * channels * eb)


def weight_bytes(spec: LayerSpec) -> int:
    if spec.layer_kind == LayerKind.FULLY_CONNECTED:
        return math.prod(spec.dims) * spec.element_bytes
    if spec.layer_kind == LayerKind.RNN:
        return 4 * spec.dims[0] ** 2 * spec.element_bytes
    return 0
