"""Dirty block index for row-aware rinsing and the PC-indexed L2 bypass predictor."""

from __future__ import annotations

import enum
from typing import Callable, Optional

from .cache import Cache, CacheObserver


class DirtyBlockIndex:
    """Map from global DRAM row to the dirty L2 lines that live in it."""

    def __init__(self, row_key: Callable[[int], int]):
        self.row_key = row_key
        self.rows: dict = {}

    def __len__(self) -> int:
        return sum(len(s) for s in self.rows.values())

    def __contains__(self, line_addr: int) -> bool:
        s = self.rows.get(self.row_key(line_addr))
        return s is not None and line_addr in s

    def mark(self, line_addr: int):
        self.rows.setdefault(self.row_key(line_addr), set()).add(line_addr)

    def clear(self, line_addr: int):
        row = self.row_key(line_addr)
        s = self.rows.get(row)
        if s is None:
            return
        s.discard(line_addr)
        if not s:
            del self.rows[row]

    def on_dirty_evict(self, line_addr: int) -> list:
        """Other dirty lines in the evicted line's row, ascending; their
        entries are dropped since the caller writes them back."""
        others = self.rows.pop(self.row_key(line_addr), set())
        others.discard(line_addr)
        return sorted(others)

    def lines(self) -> set:
        out: set = set()
        for s in self.rows.values():
            out |= s
        return out


def audit(dbi: DirtyBlockIndex, cache: Cache) -> int:
    """Number of discrepancies between the index and the cache's Dirty lines."""
    bad = len(dbi.lines() ^ cache.dirty_lines())
    for row, lines in dbi.rows.items():
        bad += sum(1 for a in lines if dbi.row_key(a) != row)
        bad += not lines
    return bad


class Decision(enum.Enum):
    CACHE = "cache"
    BYPASS = "bypass"


class PredictorTable:
    """Saturating counters indexed by an xor-fold of the PC.

    PCs that fold to the same index share a counter.
    """

    def __init__(self, entries: int = 1024, counter_bits: int = 2,
                 threshold: int = 2, initial: Optional[int] = None):
        if entries < 1 or entries & (entries - 1):
            raise ValueError("predictor table size must be a power of two")
        self.bits = entries.bit_length() - 1
        self.mask = entries - 1
        self.max = (1 << counter_bits) - 1
        if not 0 <= threshold <= self.max + 1:
            raise ValueError("threshold out of counter range")
        self.threshold = threshold
        start = threshold if initial is None else initial
        self.counters = [min(max(start, 0), self.max)] * entries

    def index(self, pc: int) -> int:
        if self.bits == 0:
            return 0
        idx = 0
        while pc:
            idx ^= pc & self.mask
            pc >>= self.bits
        return idx

    def decide(self, pc: int) -> Decision:
        if self.counters[self.index(pc)] < self.threshold:
            return Decision.BYPASS
        return Decision.CACHE

    def train(self, pc: int, reused: bool):
        i = self.index(pc)
        c = self.counters[i]
        if reused:
            if c < self.max:
                self.counters[i] = c + 1
        elif c > 0:
            self.counters[i] = c - 1


class ReuseTracker:
    """Per-line (inserting pc, reused) record; trains the predictor when the
    line's lifetime in the L2 ends."""

    def __init__(self, predictor: PredictorTable):
        self.predictor = predictor
        self.lines: dict = {}
        self.events = 0
        self.reused_events = 0

    def insert(self, line_addr: int, pc: int):
        self.lines[line_addr] = [pc, False]

    def touch(self, line_addr: int):
        rec = self.lines.get(line_addr)
        if rec is not None:
            rec[1] = True

    def end(self, line_addr: int):
        rec = self.lines.pop(line_addr, None)
        if rec is None:
            return
        self.events += 1
        self.reused_events += rec[1]
        self.predictor.train(rec[0], rec[1])


class L2Sidecars(CacheObserver):
    """Wires the index and tracker (either may be absent) to L2 events."""

    def __init__(self, dbi: Optional[DirtyBlockIndex] = None,
                 tracker: Optional[ReuseTracker] = None):
        self.dbi = dbi
        self.tracker = tracker

    def on_install(self, line_addr, pc):
        if self.tracker is not None:
            self.tracker.insert(line_addr, pc)

    def on_hit(self, line_addr):
        if self.tracker is not None:
            self.tracker.touch(line_addr)

    def on_dirty(self, line_addr):
        if self.dbi is not None:
            self.dbi.mark(line_addr)

    def on_clean(self, line_addr):
        if self.dbi is not None:
            self.dbi.clear(line_addr)

    def on_end(self, line_addr):
        if self.tracker is not None:
            self.tracker.end(line_addr)
