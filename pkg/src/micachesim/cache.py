"""Set-associative cache with MSHRs, used for both the per-CU L1s and the L2.

The model is untimed: :meth:`Cache.access` classifies a request against the
current state and mutates it, and :meth:`Cache.fill` completes an outstanding
miss.  The simulation engine supplies time, ports and retries.

Replacement is LRU among non-Busy ways with Invalid ways taken first.  Bypass
(non-cacheable) requests never install lines; bypass loads are tracked in
MSHR entries flagged ``is_bypass`` so later loads of the same line can
coalesce onto them.  Those entries do not count against ``mshr_entries``.
With ``mshr_banks > 1`` the MSHR file is split by line address and each bank
holds ``mshr_entries`` allocating entries.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

from .trace import LINE_BYTES, Kind, MemAccess, store_payload


class Level(str, enum.Enum):
    L1 = "L1"
    L2 = "L2"


class WritePolicy(str, enum.Enum):
    WRITE_THROUGH_NO_ALLOCATE = "write_through"
    COALESCE_DIRTY = "coalesce_dirty"


class State(enum.IntEnum):
    INVALID = 0
    VALID = 1
    BUSY = 2
    DIRTY = 3


class Result(enum.Enum):
    HIT = "hit"
    MISS_ALLOCATED = "miss_allocated"
    MISS_BYPASSED = "miss_bypassed"
    COALESCED = "coalesced"
    STALLED_FULL = "stalled_full"


class StallCause(enum.Enum):
    BUSY_SET = "busy_set"
    MSHR_FULL = "mshr_full"
    TARGETS_FULL = "targets_full"


class CacheMisuse(Exception):
    pass


@dataclass
class CacheConfig:
    size_bytes: int
    associativity: int
    level: Level = Level.L1
    write_policy: WritePolicy = WritePolicy.WRITE_THROUGH_NO_ALLOCATE
    mshr_entries: int = 32
    mshr_targets_per_entry: Optional[int] = 8
    allocation_bypass: bool = False
    mshr_banks: int = 1
    line_bytes: int = LINE_BYTES

    def __post_init__(self):
        self.level = Level(self.level)
        self.write_policy = WritePolicy(self.write_policy)
        if self.line_bytes != LINE_BYTES:
            raise ValueError(f"line_bytes must be {LINE_BYTES}")
        if self.associativity < 1 or self.size_bytes <= 0:
            raise ValueError("size and associativity must be positive")
        sets, rem = divmod(self.size_bytes, self.associativity * self.line_bytes)
        if rem or sets < 1:
            raise ValueError(
                f"{self.size_bytes} B is not an integral number of "
                f"{self.associativity}-way sets of {self.line_bytes} B lines")
        if self.mshr_entries < 1 or self.mshr_banks < 1:
            raise ValueError("mshr_entries and mshr_banks must be >= 1")
        if self.mshr_targets_per_entry is not None and self.mshr_targets_per_entry < 1:
            raise ValueError("mshr_targets_per_entry must be >= 1")

    @property
    def num_sets(self) -> int:
        return self.size_bytes // (self.associativity * self.line_bytes)

    @classmethod
    def l1_default(cls, **kw) -> "CacheConfig":
        args = dict(size_bytes=16 * 1024, associativity=16, level=Level.L1,
                    write_policy=WritePolicy.WRITE_THROUGH_NO_ALLOCATE,
                    mshr_entries=32, mshr_targets_per_entry=8)
        args.update(kw)
        return cls(**args)

    @classmethod
    def l2_default(cls, **kw) -> "CacheConfig":
        args = dict(size_bytes=4 * 1024 * 1024, associativity=16, level=Level.L2,
                    write_policy=WritePolicy.COALESCE_DIRTY,
                    mshr_entries=128, mshr_targets_per_entry=16, mshr_banks=8)
        args.update(kw)
        return cls(**args)


class LineData:
    """Bytes written into a line plus a mask of which bytes were written."""

    __slots__ = ("data", "mask")

    def __init__(self):
        self.data = bytearray(LINE_BYTES)
        self.mask = 0

    def merge(self, offset: int, payload: bytes):
        self.data[offset:offset + len(payload)] = payload
        self.mask |= ((1 << len(payload)) - 1) << offset

    def merge_from(self, other: "LineData"):
        m = other.mask
        for i in range(LINE_BYTES):
            if m >> i & 1:
                self.data[i] = other.data[i]
        self.mask |= m

    @classmethod
    def of_store(cls, req: MemAccess) -> "LineData":
        d = cls()
        d.merge(req.addr % LINE_BYTES, store_payload(req))
        return d


class Line:
    __slots__ = ("line_addr", "state", "lru", "pending_dirty", "data")

    def __init__(self):
        self.line_addr = -1
        self.state = State.INVALID
        self.lru = 0
        self.pending_dirty = False
        self.data: Optional[LineData] = None

    @property
    def holds_dirty_data(self) -> bool:
        return self.state == State.DIRTY or self.pending_dirty


@dataclass
class MshrEntry:
    line_addr: int
    targets: list = field(default_factory=list)
    is_bypass: bool = False


@dataclass(frozen=True)
class Evicted:
    line_addr: int
    was_dirty: bool
    data: Optional[LineData] = None


@dataclass(frozen=True)
class AccessOutcome:
    result: Result
    evicted: Optional[Evicted] = None
    cause: Optional[StallCause] = None


class CacheObserver:
    """Hooks for sidecar structures; every method is optional to override."""

    def on_install(self, line_addr: int, pc: int): ...

    def on_hit(self, line_addr: int): ...

    def on_dirty(self, line_addr: int): ...

    def on_clean(self, line_addr: int): ...

    def on_end(self, line_addr: int): ...


_HIT = AccessOutcome(Result.HIT)
_BYPASSED = AccessOutcome(Result.MISS_BYPASSED)
_COALESCED = AccessOutcome(Result.COALESCED)
_ALLOCATED = AccessOutcome(Result.MISS_ALLOCATED)
_STALL = {c: AccessOutcome(Result.STALLED_FULL, cause=c) for c in StallCause}


class Cache:
    def __init__(self, config: CacheConfig, observer: Optional[CacheObserver] = None,
                 name: str = ""):
        self.config = config
        self.name = name or config.level.value
        self.observer = observer
        self.num_sets = config.num_sets
        self.ways = config.associativity
        self.sets = [[Line() for _ in range(self.ways)] for _ in range(self.num_sets)]
        self.where: dict = {}
        self.mshr: dict = {}
        self.mshr_alloc = [0] * config.mshr_banks
        self.mshr_banks = config.mshr_banks
        self._stamp = 0
        self.counts = {r: 0 for r in Result}
        self.coalesce_dirty = config.write_policy == WritePolicy.COALESCE_DIRTY

    # -- helpers ---------------------------------------------------------

    def set_index(self, line_addr: int) -> int:
        return (line_addr // LINE_BYTES) % self.num_sets

    def state_of(self, line_addr: int) -> State:
        line = self.where.get(line_addr)
        return line.state if line else State.INVALID

    def lines_in(self, *states: State) -> list:
        return sorted(a for a, ln in self.where.items() if ln.state in states)

    def dirty_lines(self) -> set:
        return {a for a, ln in self.where.items() if ln.state == State.DIRTY}

    def line_data(self, line_addr: int) -> Optional[LineData]:
        line = self.where.get(line_addr)
        return line.data if line else None

    def _room(self, entry: MshrEntry) -> bool:
        cap = self.config.mshr_targets_per_entry
        return cap is None or len(entry.targets) < cap

    def _touch(self, line: Line):
        self._stamp += 1
        line.lru = self._stamp

    # -- operations ------------------------------------------------------

    def access(self, req: MemAccess, cacheable: bool, now: int = 0,
               req_id: Optional[int] = None) -> AccessOutcome:
        """Present one request; see the module docstring for the state machine."""
        out = self._access(req, cacheable, req.seq if req_id is None else req_id)
        self.counts[out.result] += 1
        return out

    def _access(self, req: MemAccess, cacheable: bool, rid: int) -> AccessOutcome:
        la = req.addr - req.addr % LINE_BYTES
        store = req.kind == Kind.STORE
        line = self.where.get(la)
        obs = self.observer

        if not cacheable:
            if store:
                # Newer bytes must not be shadowed by an older dirty copy.
                if line is not None and line.holds_dirty_data:
                    line.data.merge(req.addr - la, store_payload(req))
                    return _HIT
                return _BYPASSED
            if line is not None and line.state in (State.VALID, State.DIRTY):
                return _HIT
            entry = self.mshr.get(la)
            if entry is not None:
                if not self._room(entry):
                    return _STALL[StallCause.TARGETS_FULL]
                entry.targets.append(rid)
                return _COALESCED
            self.mshr[la] = MshrEntry(la, [rid], is_bypass=True)
            return _BYPASSED

        if line is not None:
            if line.state == State.BUSY:
                if store and self.coalesce_dirty:
                    if line.data is None:
                        line.data = LineData()
                    line.data.merge(req.addr - la, store_payload(req))
                    line.pending_dirty = True
                    if obs:
                        obs.on_hit(la)
                    return _HIT
                if store:
                    return _BYPASSED
                entry = self.mshr[la]
                if not self._room(entry):
                    return _STALL[StallCause.TARGETS_FULL]
                entry.targets.append(rid)
                return _COALESCED
            self._touch(line)
            if store and self.coalesce_dirty:
                if line.data is None:
                    line.data = LineData()
                line.data.merge(req.addr - la, store_payload(req))
                if line.state != State.DIRTY:
                    line.state = State.DIRTY
                    if obs:
                        obs.on_dirty(la)
            if obs:
                obs.on_hit(la)
            return _HIT

        if store and not self.coalesce_dirty:
            return _BYPASSED
        pending = self.mshr.get(la)
        if not store and pending is not None:
            if not self._room(pending):
                return _STALL[StallCause.TARGETS_FULL]
            pending.targets.append(rid)
            return _COALESCED

        ways = self.sets[self.set_index(la)]
        way = self.evict_victim(ways)
        if way is None:
            if not self.config.allocation_bypass:
                return _STALL[StallCause.BUSY_SET]
            if store:
                return _BYPASSED
            self.mshr[la] = MshrEntry(la, [rid], is_bypass=True)
            return _BYPASSED
        mbank = (la // LINE_BYTES) % self.mshr_banks
        if not store and self.mshr_alloc[mbank] >= self.config.mshr_entries:
            return _STALL[StallCause.MSHR_FULL]

        victim = ways[way]
        evicted = None
        if victim.state != State.INVALID:
            was_dirty = victim.state == State.DIRTY
            evicted = Evicted(victim.line_addr, was_dirty, victim.data if was_dirty else None)
            del self.where[victim.line_addr]
            if obs:
                if was_dirty:
                    obs.on_clean(victim.line_addr)
                obs.on_end(victim.line_addr)
        victim.line_addr = la
        victim.pending_dirty = False
        victim.data = None
        self._touch(victim)
        self.where[la] = victim
        if store:
            victim.state = State.DIRTY
            victim.data = LineData.of_store(req)
            if obs:
                obs.on_install(la, req.pc)
                obs.on_dirty(la)
        else:
            victim.state = State.BUSY
            self.mshr[la] = MshrEntry(la, [rid])
            self.mshr_alloc[mbank] += 1
            if obs:
                obs.on_install(la, req.pc)
        if evicted is None:
            return _ALLOCATED
        return AccessOutcome(Result.MISS_ALLOCATED, evicted)

    def evict_victim(self, ways: list) -> Optional[int]:
        """Index of the way to replace: first Invalid way, else LRU non-Busy."""
        best = None
        best_stamp = None
        for i, line in enumerate(ways):
            st = line.state
            if st == State.INVALID:
                return i
            if st != State.BUSY and (best is None or line.lru < best_stamp):
                best, best_stamp = i, line.lru
        return best

    def fill(self, line_addr: int, now: int = 0) -> list:
        """Complete the outstanding miss for ``line_addr``; returns released ids."""
        entry = self.mshr.pop(line_addr, None)
        assert entry is not None, f"{self.name}: fill of {line_addr:#x} without an MSHR entry"
        if not entry.is_bypass:
            self.mshr_alloc[(line_addr // LINE_BYTES) % self.mshr_banks] -= 1
            line = self.where[line_addr]
            assert line.state == State.BUSY
            if line.pending_dirty:
                line.state = State.DIRTY
                line.pending_dirty = False
                if self.observer:
                    self.observer.on_dirty(line_addr)
            else:
                line.state = State.VALID
        return entry.targets

    def self_invalidate(self) -> int:
        """Drop every Valid line; Dirty and Busy lines are left alone."""
        gone = [a for a, ln in self.where.items() if ln.state == State.VALID]
        for a in gone:
            self.where.pop(a).state = State.INVALID
            if self.observer:
                self.observer.on_end(a)
        return len(gone)

    def flush_dirty(self, row_key: Optional[Callable[[int], int]] = None,
                    data_out: Optional[dict] = None) -> list:
        """Invalidate all Dirty lines; returns their addresses ordered by
        (row_key(addr), addr) so same-row writebacks are adjacent."""
        if not self.coalesce_dirty:
            raise CacheMisuse(f"{self.name}: flush_dirty on a write-through cache")
        dirty = [a for a, ln in self.where.items() if ln.state == State.DIRTY]
        key = row_key or (lambda a: 0)
        dirty.sort(key=lambda a: (key(a), a))
        for a in dirty:
            line = self.where.pop(a)
            assert not line.pending_dirty
            if data_out is not None:
                data_out[a] = line.data
            line.state = State.INVALID
            line.data = None
            if self.observer:
                self.observer.on_clean(a)
                self.observer.on_end(a)
        return dirty

    def rinse(self, line_addr: int) -> LineData:
        """Write back a Dirty line without evicting it (Dirty -> Valid)."""
        line = self.where[line_addr]
        assert line.state == State.DIRTY, f"rinse of non-dirty line {line_addr:#x}"
        data = line.data
        line.state = State.VALID
        line.data = None
        if self.observer:
            self.observer.on_clean(line_addr)
        return data


def replay_functional(cache: Cache, requests) -> list:
    """Untimed replay: every request is cacheable and every miss is filled at
    once.  Returns one bool per request, True for a hit.

    Fills never wait, so with unbounded MSHR targets this is a plain LRU
    cache and can be checked against a reference model.
    """
    hits = []
    for req in requests:
        out = cache.access(req, True)
        if out.result == Result.STALLED_FULL:
            raise CacheMisuse(f"{cache.name}: stall in functional replay ({out.cause})")
        hits.append(out.result == Result.HIT)
        if out.result == Result.MISS_ALLOCATED and req.kind == Kind.LOAD:
            cache.fill(req.addr - req.addr % LINE_BYTES)
    return hits
