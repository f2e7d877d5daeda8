"""Memory-trace data model and the on-disk trace format.

Binary layout (little-endian)::

    header  16 B   magic "MITR", u16 version, u16 flags, u64 record count
    record  32 B   u64 seq, u64 pc, u64 addr, u8 size, u8 kind, u8 cu_id,
                   u8 scope, u32 kernel_id

``kind`` is 0=Load, 1=Store, 2=KernelMarker; ``scope`` is only meaningful for
markers (0=Kernel, 1=SystemScope).  When bit 0 of ``flags`` is set, the
records are followed by a u32 length and a UTF-8 JSON object holding the
trace metadata.

A line-oriented text form is also accepted by :func:`read_trace`, mostly for
hand-written fixtures::

    # kind seq pc addr size cu kernel
    L 0 0x400 0x1000 64 0 0
    S 1 0x404 0x2000 4 0 0
    K 0 Kernel
"""

from __future__ import annotations

import enum
import io
import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator, Union

LINE_BYTES = 64
MAGIC = b"MITR"
VERSION = 1
FLAG_META = 0x1

_HEADER = struct.Struct("<4sHHQ")
_RECORD = struct.Struct("<QQQBBBBI")
_META_LEN = struct.Struct("<I")


class TraceError(Exception):
    """Base class for trace construction and parsing failures."""


class EmptySpec(TraceError):
    pass


class InvalidSpec(TraceError):
    pass


class FootprintTooLarge(TraceError):
    pass


class InvalidTrace(TraceError):
    pass


class ParseError(TraceError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class Kind(enum.IntEnum):
    LOAD = 0
    STORE = 1


class Scope(enum.IntEnum):
    KERNEL = 0
    SYSTEM = 1


@dataclass(frozen=True, slots=True)
class MemAccess:
    seq: int
    pc: int
    addr: int
    size: int
    kind: Kind
    cu_id: int
    kernel_id: int

    @property
    def line(self) -> int:
        return self.addr & ~(LINE_BYTES - 1)

    @property
    def is_store(self) -> bool:
        return self.kind == Kind.STORE


@dataclass(frozen=True, slots=True)
class KernelMarker:
    kernel_id: int
    scope: Scope = Scope.KERNEL


TraceItem = Union[MemAccess, KernelMarker]


@dataclass
class Trace:
    items: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def accesses(self) -> Iterator[MemAccess]:
        return (it for it in self.items if isinstance(it, MemAccess))

    def markers(self) -> Iterator[KernelMarker]:
        return (it for it in self.items if isinstance(it, KernelMarker))

    def __len__(self) -> int:
        return len(self.items)

    def validate(self) -> None:
        """Raise InvalidTrace if any structural invariant is broken."""
        last_seq = -1
        kernel = None
        closed = False
        for pos, it in enumerate(self.items):
            if isinstance(it, KernelMarker):
                if kernel is not None and it.kernel_id != kernel:
                    raise InvalidTrace(
                        f"item {pos}: marker for kernel {it.kernel_id} "
                        f"closes kernel {kernel}")
                closed = True
                continue
            if it.seq <= last_seq:
                raise InvalidTrace(f"item {pos}: seq {it.seq} not increasing")
            last_seq = it.seq
            if kernel is not None:
                if it.kernel_id < kernel:
                    raise InvalidTrace(
                        f"item {pos}: kernel_id regresses {kernel} -> {it.kernel_id}")
                if it.kernel_id > kernel and not closed:
                    raise InvalidTrace(
                        f"item {pos}: kernel {kernel} has no closing marker")
                if it.kernel_id == kernel and closed:
                    raise InvalidTrace(f"item {pos}: access after kernel {kernel} closed")
            kernel = it.kernel_id
            closed = False
            if not 1 <= it.size <= LINE_BYTES:
                raise InvalidTrace(f"item {pos}: size {it.size} out of range")
            if (it.addr % LINE_BYTES) + it.size > LINE_BYTES:
                raise InvalidTrace(f"item {pos}: access crosses a line boundary")


def store_payload(req: MemAccess) -> bytes:
    """Deterministic byte values written by a store (functional checking only)."""
    base = (req.seq * 0x9E3779B1) & 0xFFFFFFFF
    return bytes(((base >> (8 * (i % 4))) + i) & 0xFF for i in range(req.size))


# --- serialization -------------------------------------------------------

def write_trace(trace: Trace, sink: BinaryIO) -> int:
    """Write ``trace`` in the binary format; returns the number of bytes written."""
    flags = FLAG_META if trace.meta else 0
    out = [_HEADER.pack(MAGIC, VERSION, flags, len(trace.items))]
    pack = _RECORD.pack
    for it in trace.items:
        if isinstance(it, KernelMarker):
            out.append(pack(0, 0, 0, 0, 2, 0, int(it.scope), it.kernel_id))
        else:
            out.append(pack(it.seq, it.pc, it.addr, it.size, int(it.kind),
                            it.cu_id, 0, it.kernel_id))
    if flags & FLAG_META:
        blob = json.dumps(trace.meta, sort_keys=True).encode()
        out.append(_META_LEN.pack(len(blob)))
        out.append(blob)
    data = b"".join(out)
    sink.write(data)
    return len(data)


def read_trace(source: BinaryIO) -> Trace:
    """Parse a binary or text trace from a byte stream."""
    data = source.read()
    if data[:4] == MAGIC:
        return _read_binary(data)
    return _read_text(data)


def trace_to_bytes(trace: Trace) -> bytes:
    buf = io.BytesIO()
    write_trace(trace, buf)
    return buf.getvalue()


def trace_from_bytes(data: bytes) -> Trace:
    return read_trace(io.BytesIO(data))


def _read_binary(data: bytes) -> Trace:
    if len(data) < _HEADER.size:
        raise ParseError("truncated header", len(data))
    magic, version, flags, count = _HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", 4)
    off = _HEADER.size
    end = off + count * _RECORD.size
    if len(data) < end:
        whole = (len(data) - off) // _RECORD.size
        raise ParseError(f"truncated stream: {whole} of {count} records",
                         off + whole * _RECORD.size)
    items: list = []
    for rec_off in range(off, end, _RECORD.size):
        seq, pc, addr, size, kind, cu, scope, kid = _RECORD.unpack_from(data, rec_off)
        if kind == 2:
            if scope > 1:
                raise ParseError(f"bad marker scope {scope}", rec_off)
            items.append(KernelMarker(kid, Scope(scope)))
        elif kind <= 1:
            if not 1 <= size <= LINE_BYTES:
                raise ParseError(f"bad access size {size}", rec_off)
            items.append(MemAccess(seq, pc, addr, size, Kind(kind), cu, kid))
        else:
            raise ParseError(f"bad record kind {kind}", rec_off)
    meta: dict = {}
    if flags & FLAG_META:
        if len(data) < end + _META_LEN.size:
            raise ParseError("truncated metadata length", end)
        (n,) = _META_LEN.unpack_from(data, end)
        blob = data[end + _META_LEN.size:end + _META_LEN.size + n]
        if len(blob) != n:
            raise ParseError("truncated metadata", end + _META_LEN.size)
        try:
            meta = json.loads(blob.decode())
        except ValueError as exc:
            raise ParseError(f"bad metadata: {exc}", end + _META_LEN.size) from None
    return Trace(items, meta)


def _read_text(data: bytes) -> Trace:
    items: list = []
    offset = 0
    for raw in data.splitlines(keepends=True):
        line = raw.split(b"#", 1)[0].decode(errors="replace").split()
        here, offset = offset, offset + len(raw)
        if not line:
            continue
        try:
            tag = line[0].upper()
            if tag == "K":
                if len(line) != 3:
                    raise ValueError("marker needs: K kernel_id scope")
                scope = {"KERNEL": Scope.KERNEL, "SYSTEMSCOPE": Scope.SYSTEM,
                         "0": Scope.KERNEL, "1": Scope.SYSTEM}[line[2].upper()]
                items.append(KernelMarker(int(line[1], 0), scope))
            elif tag in ("L", "S"):
                if len(line) != 7:
                    raise ValueError("access needs: L|S seq pc addr size cu kernel")
                seq, pc, addr, size, cu, kid = (int(x, 0) for x in line[1:])
                kind = Kind.LOAD if tag == "L" else Kind.STORE
                items.append(MemAccess(seq, pc, addr, size, kind, cu, kid))
            else:
                raise ValueError(f"unknown record tag {line[0]!r}")
        except (ValueError, KeyError) as exc:
            raise ParseError(f"malformed text record: {exc}", here) from None
    return Trace(items, {})


def format_text(trace: Trace) -> str:
    """The line-oriented text form accepted by :func:`read_trace`."""
    out = []
    for it in trace.items:
        if isinstance(it, KernelMarker):
            scope = "SystemScope" if it.scope == Scope.SYSTEM else "Kernel"
            out.append(f"K {it.kernel_id} {scope}")
        else:
            tag = "L" if it.kind == Kind.LOAD else "S"
            out.append(f"{tag} {it.seq} {it.pc:#x} {it.addr:#x} {it.size} {it.cu_id} {it.kernel_id}")
    return "".join(line + "\n" for line in out)


def renumber(items: Iterable[TraceItem]) -> list:
    """Reassign seq numbers 0..n-1 to accesses, keeping order."""
    out = []
    n = 0
    for it in items:
        if isinstance(it, MemAccess):
            it = MemAccess(n, it.pc, it.addr, it.size, it.kind, it.cu_id, it.kernel_id)
            n += 1
        out.append(it)
    return out


def concat(traces: Iterable[Trace], name: str = "concat") -> Trace:
    """Run traces back to back as one: kernel ids are shifted to stay
    increasing, every marker but the last becomes kernel scope and the last
    one system scope."""
    items: list = []
    parts = []
    kid = 0
    for t in traces:
        parts.append(t.meta)
        remap: dict = {}
        for it in t.items:
            k = remap.setdefault(it.kernel_id, kid + len(remap))
            if isinstance(it, MemAccess):
                items.append(MemAccess(it.seq, it.pc, it.addr, it.size, it.kind, it.cu_id, k))
            else:
                items.append(KernelMarker(k, Scope.KERNEL))
        kid += len(remap)
    if items and isinstance(items[-1], MemAccess):
        items.append(KernelMarker(kid - 1, Scope.KERNEL))
    if items:
        items[-1] = KernelMarker(items[-1].kernel_id, Scope.SYSTEM)
    return Trace(renumber(items), {"generator": name, "parts": parts})
