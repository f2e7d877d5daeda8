"""Banked HBM-style DRAM with an open-row policy.

Address mapping, low bits to high::

    | 6 bits line offset | channel | bank | column (line within row) | row |

so consecutive lines go to consecutive channels, then consecutive banks, and
a (channel, bank) pair sees a row's columns at a stride of
``channels * banks`` lines.

Per bank, requests are served FIFO.  An access occupies the bank for
``t_row_hit`` or ``t_row_miss`` cycles and then the channel's data bus for
``t_bus`` cycles, taking the earliest bus gap that is free at that point; the
bank stays busy until its transfer ends.  No refresh, no tFAW/tRRD, no read/write turnaround.
"""

from __future__ import annotations

from bisect import bisect_right, insort
from collections import deque
from dataclasses import dataclass
from typing import Optional

from .trace import LINE_BYTES


class Backpressure(Exception):
    """The target bank queue is full; retry in a later cycle."""


@dataclass
class DramConfig:
    channels: int = 16
    banks_per_channel: int = 16
    row_bytes: int = 2048
    t_row_hit: int = 10
    t_row_miss: int = 50
    t_bus: int = 4
    queue_depth: int = 32

    def __post_init__(self):
        lines = self.row_bytes // LINE_BYTES
        if self.row_bytes % LINE_BYTES or lines & (lines - 1):
            raise ValueError("row_bytes must be a power-of-two multiple of 64")
        if min(self.t_row_hit, self.t_row_miss, self.t_bus) <= 0:
            raise ValueError("DRAM latencies must be positive")
        if self.channels < 1 or self.banks_per_channel < 1 or self.queue_depth < 1:
            raise ValueError("channels, banks and queue depth must be positive")

    @property
    def lines_per_row(self) -> int:
        return self.row_bytes // LINE_BYTES

    @property
    def idle_latency(self) -> int:
        """Service latency of a row miss on an idle bank."""
        return self.t_row_miss + self.t_bus


@dataclass(slots=True)
class DramOutcome:
    service_latency: int
    row_hit: bool
    done: int


class BankState:
    __slots__ = ("open_row", "busy_until", "inflight")

    def __init__(self):
        self.open_row: Optional[int] = None
        self.busy_until = 0
        self.inflight: deque = deque()


def map_address(addr: int, cfg: DramConfig) -> tuple:
    """(channel, bank, row, column) for the line containing ``addr``."""
    line = addr // LINE_BYTES
    line, ch = divmod(line, cfg.channels)
    line, bank = divmod(line, cfg.banks_per_channel)
    row, col = divmod(line, cfg.lines_per_row)
    return ch, bank, row, col


def row_of(addr: int, cfg: DramConfig) -> int:
    """Global row id: (row, bank, channel) packed into one integer."""
    ch, bank, row, _ = map_address(addr, cfg)
    return (row * cfg.banks_per_channel + bank) * cfg.channels + ch


class Dram:
    def __init__(self, config: Optional[DramConfig] = None):
        self.config = cfg = config or DramConfig()
        self.banks = [BankState() for _ in range(cfg.channels * cfg.banks_per_channel)]
        self.bus = [[] for _ in range(cfg.channels)]
        self.reads = 0
        self.writes = 0
        self.read_row_hits = 0
        self.read_row_misses = 0
        self.write_row_hits = 0
        self.write_row_misses = 0

    @property
    def accesses(self) -> int:
        return self.reads + self.writes

    @property
    def row_hits(self) -> int:
        return self.read_row_hits + self.write_row_hits

    @property
    def row_misses(self) -> int:
        return self.read_row_misses + self.write_row_misses

    def bank_index(self, addr: int) -> int:
        ch, bank, _, _ = map_address(addr, self.config)
        return bank * self.config.channels + ch

    def queue_length(self, addr: int, now: int) -> int:
        q = self.banks[self.bank_index(addr)].inflight
        while q and q[0] <= now:
            q.popleft()
        return len(q)

    def can_accept(self, addr: int, now: int) -> bool:
        return self.queue_length(addr, now) < self.config.queue_depth

    def _reserve_bus(self, ch: int, ready: int, now: int) -> int:
        """Book the first ``t_bus``-cycle gap on channel ``ch`` at or after ``ready``."""
        tb = self.config.t_bus
        slots = self.bus[ch]
        if slots and slots[0] + tb <= now - tb:
            del slots[:bisect_right(slots, now - 2 * tb)]
        t = ready
        i = bisect_right(slots, t)
        if i and slots[i - 1] + tb > t:
            t = slots[i - 1] + tb
        while i < len(slots) and slots[i] < t + tb:
            t = max(t, slots[i] + tb)
            i += 1
        insort(slots, t)
        return t

    def access(self, line_addr: int, is_write: bool, now: int) -> DramOutcome:
        cfg = self.config
        ch, bank_no, row, _ = map_address(line_addr, cfg)
        bank = self.banks[bank_no * cfg.channels + ch]
        q = bank.inflight
        while q and q[0] <= now:
            q.popleft()
        if len(q) >= cfg.queue_depth:
            raise Backpressure(f"bank {bank_no} of channel {ch} is full")
        hit = bank.open_row == row
        start = max(now, bank.busy_until)
        xfer = self._reserve_bus(ch, start + (cfg.t_row_hit if hit else cfg.t_row_miss), now)
        done = xfer + cfg.t_bus
        bank.busy_until = done
        bank.open_row = row
        q.append(done)
        if is_write:
            self.writes += 1
            if hit:
                self.write_row_hits += 1
            else:
                self.write_row_misses += 1
        else:
            self.reads += 1
            if hit:
                self.read_row_hits += 1
            else:
                self.read_row_misses += 1
        return DramOutcome(done - now, hit, done)
