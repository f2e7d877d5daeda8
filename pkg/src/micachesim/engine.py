"""Cycle-approximate driver: CUs -> per-CU L1 -> shared L2 -> DRAM.

Timing model
------------
Work is dispatched to the CUs of a kernel one every ``dispatch_interval``
cycles.  Every CU then issues up to ``issue_width_per_cu`` requests per
cycle, in trace order, and keeps at most ``max_outstanding_per_cu`` in flight (loads until
data returns, stores until the L2 accepts them).  Uncontended latencies are
fixed so that an L1 hit takes ``latencies.l1`` cycles, an L2 hit
``latencies.l2`` and an idle-bank DRAM row miss exactly ``latencies.mem``:

    L1 lookup -> L2 arrival: 1 cycle
    L2 lookup -> data back at the CU: l2 - 1 cycles
    L2 miss -> DRAM enqueue: 1 cycle
    DRAM completion -> L2 fill: mem - l2 - (t_row_miss + t_bus) cycles
    L2 fill -> data back at the CU: l2 - 2 cycles

Each L1 admits ``l1_tag_ports`` queries per cycle.  The L2 tag array is split
into ``l2_tag_banks`` banks by line address; each bank serves its oldest
waiting request once per cycle, and a failed lookup still uses the port.
Installing a fetched line takes a port slot at either level; bypass
responses do not.
Every cycle a ready request spends blocked in front of a cache adds one to
``cache_stall_cycles``.  DRAM backpressure is not a cache stall.

A kernel marker is a barrier: the next kernel starts once every request of
the current one has completed (stores: accepted by the L2).  Then the L2
flushes its dirty lines (system scope only) and all caches self-invalidate.
"""

from __future__ import annotations

import enum
import heapq
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .adaptive import Decision, DirtyBlockIndex, L2Sidecars, PredictorTable, ReuseTracker
from .cache import Cache, CacheConfig, LineData, Result
from .dram import Dram, DramConfig, row_of
from .trace import LINE_BYTES, InvalidTrace, KernelMarker, Kind, MemAccess, Scope, Trace


class Policy(str, enum.Enum):
    UNCACHED = "uncached"
    CACHE_R = "cacher"
    CACHE_RW = "cacherw"


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    policy: Policy = Policy.UNCACHED
    allocation_bypass: bool = False
    cache_rinse: bool = False
    pc_bypass: bool = False

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy(self.policy))
        if (self.cache_rinse or self.pc_bypass) and self.policy != Policy.CACHE_RW:
            raise PolicyError("cache rinsing and PC bypassing require the CacheRW policy")
        if self.allocation_bypass and self.policy == Policy.UNCACHED:
            raise PolicyError("allocation bypass needs a caching policy")

    @property
    def label(self) -> str:
        base = {Policy.UNCACHED: "Uncached", Policy.CACHE_R: "CacheR",
                Policy.CACHE_RW: "CacheRW"}[self.policy]
        flags = (self.allocation_bypass, self.cache_rinse, self.pc_bypass)
        named = {(True, False, False): "-AB", (True, True, False): "-CR",
                 (True, True, True): "-PCby", (False, False, False): ""}
        if flags in named:
            return base + named[flags]
        return base + "".join(f"+{n}" for n, on in
                              zip(("ab", "cr", "pcby"), flags) if on)

    @property
    def flags(self) -> str:
        on = [n for n, v in zip(("ab", "cr", "pcby"),
                                (self.allocation_bypass, self.cache_rinse, self.pc_bypass)) if v]
        return "+".join(on) or "none"


PRESETS = {
    "uncached": PolicyConfig(Policy.UNCACHED),
    "cacher": PolicyConfig(Policy.CACHE_R),
    "cacherw": PolicyConfig(Policy.CACHE_RW),
    "cacherw-ab": PolicyConfig(Policy.CACHE_RW, allocation_bypass=True),
    "cacherw-cr": PolicyConfig(Policy.CACHE_RW, allocation_bypass=True, cache_rinse=True),
    "cacherw-pcby": PolicyConfig(Policy.CACHE_RW, allocation_bypass=True, cache_rinse=True,
                                 pc_bypass=True),
}
SWEEP_CELLS = list(PRESETS.values())
STATIC_LABELS = ("Uncached", "CacheR", "CacheRW")


@dataclass
class Latencies:
    l1: int = 50
    l2: int = 125
    mem: int = 225


@dataclass
class EngineConfig:
    num_cus: int = 64
    l1: CacheConfig = field(default_factory=CacheConfig.l1_default)
    l2: CacheConfig = field(default_factory=CacheConfig.l2_default)
    dram: DramConfig = field(default_factory=DramConfig)
    latencies: Latencies = field(default_factory=Latencies)
    issue_width_per_cu: int = 1
    max_outstanding_per_cu: int = 32
    dispatch_interval: int = 1
    l1_tag_ports: int = 2
    l2_tag_banks: int = 8
    predictor_entries: int = 1024
    predictor_counter_bits: int = 2
    predictor_threshold: int = 2

    def validate(self):
        lat = self.latencies
        if not 0 < lat.l1 < lat.l2 < lat.mem:
            raise ValueError("latencies must strictly increase from L1 to memory")
        if lat.mem - lat.l2 < self.dram.idle_latency:
            raise ValueError("memory latency leaves no room for the DRAM access itself")
        if lat.l2 < 3:
            raise ValueError("L2 latency too small for the pipeline model")
        if self.issue_width_per_cu < 1 or self.max_outstanding_per_cu < 1:
            raise ValueError("issue width and outstanding limit must be positive")
        if self.dispatch_interval < 0:
            raise ValueError("dispatch_interval must be non-negative")
        if self.l1_tag_ports < 1 or self.l2_tag_banks < 1:
            raise ValueError("tag ports and banks must be positive")
        if not 1 <= self.num_cus <= 256:
            raise ValueError("num_cus must be in [1, 256]")


@dataclass
class RunStats:
    cycles: int = 0
    requests_total: int = 0
    loads: int = 0
    stores: int = 0
    l1_hits: int = 0
    l1_misses: int = 0
    l1_bypasses: int = 0
    l1_coalesced: int = 0
    l2_hits: int = 0
    l2_misses: int = 0
    l2_bypasses: int = 0
    l2_coalesced: int = 0
    coalesced_count: int = 0
    dram_reads: int = 0
    dram_writes: int = 0
    read_row_hits: int = 0
    read_row_misses: int = 0
    write_row_hits: int = 0
    write_row_misses: int = 0
    fetch_reads: int = 0
    bypass_reads: int = 0
    bypass_writes: int = 0
    writebacks: int = 0
    flush_writes: int = 0
    rinse_writes: int = 0
    cache_stall_cycles: int = 0
    l1_stall_cycles: int = 0
    l2_stall_cycles: int = 0
    bypass_decisions_cache: int = 0
    bypass_decisions_bypass: int = 0
    self_invalidated_lines: int = 0
    load_latency_sum: int = 0

    @property
    def dram_accesses(self) -> int:
        return self.dram_reads + self.dram_writes

    @property
    def row_hits(self) -> int:
        return self.read_row_hits + self.write_row_hits

    @property
    def row_misses(self) -> int:
        return self.read_row_misses + self.write_row_misses

    @property
    def row_hit_ratio(self) -> float:
        n = self.row_hits + self.row_misses
        return self.row_hits / n if n else 0.0

    @property
    def write_row_hit_ratio(self) -> float:
        n = self.write_row_hits + self.write_row_misses
        return self.write_row_hits / n if n else 0.0

    @property
    def read_row_hit_ratio(self) -> float:
        n = self.read_row_hits + self.read_row_misses
        return self.read_row_hits / n if n else 0.0

    @property
    def stalls_per_request(self) -> float:
        return self.cache_stall_cycles / self.requests_total if self.requests_total else 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunStats":
        names = {f.name for f in fields(cls)}
        return cls(**{k: int(v) for k, v in d.items() if k in names})


@dataclass(frozen=True)
class RequestPath:
    l1_cacheable: bool
    l2_cacheable: bool
    bypass_reason: Optional[str] = None


def route(policy: PolicyConfig, req: MemAccess,
          predictor: Optional[PredictorTable] = None) -> RequestPath:
    """Per-level cacheability of one request under ``policy``."""
    store = req.kind == Kind.STORE
    p = policy.policy
    if p == Policy.UNCACHED:
        return RequestPath(False, False, "policy")
    if store and p == Policy.CACHE_R:
        return RequestPath(False, False, "policy")
    l1 = not store
    if policy.pc_bypass and predictor is not None:
        if predictor.decide(req.pc) == Decision.BYPASS:
            return RequestPath(l1, False, "pc_predictor")
    return RequestPath(l1, True, None if l1 else "store_bypasses_l1")


def tag_port_admit(lines: list, ports: int, banks: int = 1) -> tuple:
    """Split same-cycle tag queries into (admitted, stalled), oldest first.

    With ``banks > 1`` the ports are divided evenly among banks selected by
    line address, so at most ``ports // banks`` queries per bank get through.
    """
    per_bank = max(1, ports // banks)
    used: dict = {}
    admitted, stalled = [], []
    for la in lines:
        b = (la // LINE_BYTES) % banks
        if used.get(b, 0) < per_bank:
            used[b] = used.get(b, 0) + 1
            admitted.append(la)
        else:
            stalled.append(la)
    return admitted, stalled


# event kinds
_L2_ARRIVE, _L2_FILL, _L1_RESP, _COMPLETE, _DRAM_ENQ = range(5)


class _Req:
    __slots__ = ("req", "id", "cu", "line", "store", "l1c", "l2c", "issued")

    def __init__(self, req: MemAccess, path: RequestPath, now: int):
        self.req = req
        self.id = req.seq
        self.cu = req.cu_id
        self.line = req.addr - req.addr % LINE_BYTES
        self.store = req.kind == Kind.STORE
        self.l1c = path.l1_cacheable
        self.l2c = path.l2_cacheable
        self.issued = now


class Engine:
    def __init__(self, config: Optional[EngineConfig] = None,
                 policy: Optional[PolicyConfig] = None, record_latency: bool = False):
        self.config = cfg = config or EngineConfig()
        cfg.validate()
        self.policy = policy or PolicyConfig()
        ab = self.policy.allocation_bypass
        self.l1s = [Cache(_with_ab(cfg.l1, ab), name=f"L1[{i}]") for i in range(cfg.num_cus)]
        self.dram = Dram(cfg.dram)
        dcfg = cfg.dram
        self.row_key = lambda a: row_of(a, dcfg)
        self.dbi = DirtyBlockIndex(self.row_key) if self.policy.cache_rinse else None
        self.predictor = None
        self.tracker = None
        if self.policy.pc_bypass:
            self.predictor = PredictorTable(cfg.predictor_entries, cfg.predictor_counter_bits,
                                            cfg.predictor_threshold)
            self.tracker = ReuseTracker(self.predictor)
        sidecars = (L2Sidecars(self.dbi, self.tracker)
                    if self.dbi is not None or self.tracker is not None else None)
        self.l2 = Cache(_with_ab(cfg.l2, ab), observer=sidecars, name="L2")
        self.stats = RunStats()
        self.image: dict = {}
        self.record_latency = record_latency
        self.latencies: dict = {}

        lat = cfg.latencies
        self.t_l1_hit = lat.l1
        self.t_l2_hit = lat.l2 - 1
        self.t_link = lat.mem - lat.l2 - dcfg.idle_latency
        self.t_l2_resp = lat.l2 - 2

        self.now = 0
        self._events: list = []
        self._order = 0
        self._last_done = 0
        self._pending_fwd: dict = {}
        self._l2q = [[] for _ in range(cfg.l2_tag_banks)]
        self._l2_fill_debt = [0] * cfg.l2_tag_banks
        self._l1_fills: dict = {}
        self._dram_wait: dict = {}

    # -- plumbing --------------------------------------------------------

    def _at(self, t: int, kind: int, payload):
        self._order += 1
        heapq.heappush(self._events, (t, self._order, kind, payload))

    def _apply_write(self, line: int, data: LineData):
        mem = self.image.get(line)
        if mem is None:
            mem = self.image[line] = bytearray(LINE_BYTES)
        m = data.mask
        if m == (1 << LINE_BYTES) - 1:
            mem[:] = data.data
            return
        src = data.data
        for i in range(LINE_BYTES):
            if m >> i & 1:
                mem[i] = src[i]

    def _dram_write(self, line: int, data: Optional[LineData]):
        if data is not None:
            self._apply_write(line, data)
        self._at(self.now + 1, _DRAM_ENQ, (line, True))

    def _dram_read(self, line: int):
        self._at(self.now + 1, _DRAM_ENQ, (line, False))

    def _dram_submit(self, line: int, is_write: bool):
        dram = self.dram
        bank = dram.bank_index(line)
        waiting = self._dram_wait.get(bank)
        if waiting or not dram.can_accept(line, self.now):
            if waiting is None:
                waiting = self._dram_wait[bank] = deque()
            waiting.append((line, is_write))
            return
        self._dram_issue(line, is_write)

    def _dram_issue(self, line: int, is_write: bool):
        out = self.dram.access(line, is_write, self.now)
        if out.done > self._last_done:
            self._last_done = out.done
        if not is_write:
            self._at(out.done + self.t_link, _L2_FILL, line)

    def _dram_retry(self):
        dram = self.dram
        for bank in list(self._dram_wait):
            q = self._dram_wait[bank]
            while q and dram.can_accept(q[0][0], self.now):
                line, is_write = q.popleft()
                self._dram_issue(line, is_write)
            if not q:
                del self._dram_wait[bank]

    # -- L2 --------------------------------------------------------------

    def _l2_process(self):
        st = self.stats
        debt = self._l2_fill_debt
        for b, q in enumerate(self._l2q):
            if debt[b]:
                # the port is taken by a pending line fill this cycle
                debt[b] -= 1
                st.cache_stall_cycles += len(q)
                st.l2_stall_cycles += len(q)
                continue
            if not q:
                continue
            r = q[0][2]
            ok = self._l2_access(r)
            if ok:
                heapq.heappop(q)
                blocked = len(q)
            else:
                blocked = len(q)
            if blocked:
                st.cache_stall_cycles += blocked
                st.l2_stall_cycles += blocked

    def _l2_access(self, r: _Req) -> bool:
        st = self.stats
        out = self.l2.access(r.req, r.l2c, self.now, req_id=r.id)
        res = out.result
        if res == Result.STALLED_FULL:
            return False
        if res == Result.HIT:
            st.l2_hits += 1
            if not r.store:
                self._at(self.now + self.t_l2_hit, _L1_RESP, r.id)
        elif res == Result.MISS_ALLOCATED:
            st.l2_misses += 1
            if not r.store:
                st.fetch_reads += 1
                self._dram_read(r.line)
        elif res == Result.MISS_BYPASSED:
            st.l2_bypasses += 1
            if r.store:
                st.bypass_writes += 1
                self._dram_write(r.line, LineData.of_store(r.req))
            else:
                st.bypass_reads += 1
                self._dram_read(r.line)
        else:
            st.l2_coalesced += 1
            st.coalesced_count += 1
        ev = out.evicted
        if ev is not None and ev.was_dirty:
            st.writebacks += 1
            self._dram_write(ev.line_addr, ev.data)
            if self.dbi is not None:
                for la in self.dbi.on_dirty_evict(ev.line_addr):
                    st.rinse_writes += 1
                    self._dram_write(la, self.l2.rinse(la))
        if r.store:
            self._outstanding[r.cu] -= 1
        return True

    # -- CUs and L1 ------------------------------------------------------

    def _complete(self, rid: int):
        r = self._inflight.pop(rid)
        self._outstanding[r.cu] -= 1
        if self.record_latency:
            self.latencies[rid] = self.now - r.issued
        self.stats.load_latency_sum += self.now - r.issued

    def _issue(self, cu: int) -> bool:
        """Issue from one CU this cycle; returns True if the CU is blocked
        in front of its L1."""
        cfg = self.config
        q = self._queues[cu]
        l1 = self.l1s[cu]
        st = self.stats
        ports = max(0, cfg.l1_tag_ports - self._l1_fills.get(cu, 0))
        for _ in range(cfg.issue_width_per_cu):
            if not q or self._outstanding[cu] >= cfg.max_outstanding_per_cu:
                return False
            req = q[0]
            r = self._staged.get(req.seq)
            if r is None:
                path = route(self.policy, req, self.predictor)
                r = _Req(req, path, self.now)
                if self.predictor is not None:
                    if path.bypass_reason == "pc_predictor":
                        st.bypass_decisions_bypass += 1
                    else:
                        st.bypass_decisions_cache += 1
            if r.l1c:
                if ports == 0:
                    self._staged[req.seq] = r
                    st.cache_stall_cycles += 1
                    st.l1_stall_cycles += 1
                    return True
                ports -= 1
            out = l1.access(req, r.l1c, self.now)
            res = out.result
            if res == Result.STALLED_FULL:
                self._staged[req.seq] = r
                st.cache_stall_cycles += 1
                st.l1_stall_cycles += 1
                return True
            self._staged.pop(req.seq, None)
            q.popleft()
            r.issued = self.now
            self._outstanding[cu] += 1
            st.requests_total += 1
            if r.store:
                st.stores += 1
            else:
                st.loads += 1
                self._inflight[r.id] = r
            if res == Result.HIT:
                st.l1_hits += 1
                self._at(self.now + self.t_l1_hit, _COMPLETE, r.id)
            elif res == Result.COALESCED:
                st.l1_coalesced += 1
                st.coalesced_count += 1
            else:
                if res == Result.MISS_ALLOCATED:
                    st.l1_misses += 1
                else:
                    st.l1_bypasses += 1
                if not r.store:
                    self._pending_fwd[r.id] = r
                self._at(self.now + 1, _L2_ARRIVE, r)
        return False

    # -- main loop -------------------------------------------------------

    def _segments(self, trace: Trace) -> list:
        try:
            trace.validate()
        except InvalidTrace:
            raise
        segs = []
        cur: list = []
        for it in trace.items:
            if isinstance(it, KernelMarker):
                segs.append((cur, it))
                cur = []
            else:
                if it.cu_id >= self.config.num_cus:
                    raise InvalidTrace(f"cu_id {it.cu_id} >= num_cus {self.config.num_cus}")
                cur.append(it)
        if cur:
            segs.append((cur, None))
        return segs

    def _handle(self, kind: int, payload):
        if kind == _L2_ARRIVE:
            r = payload
            heapq.heappush(self._l2q[(r.line // LINE_BYTES) % len(self._l2q)],
                           (r.id, self._order, r))
        elif kind == _DRAM_ENQ:
            self._dram_submit(*payload)
        elif kind == _L2_FILL:
            if not self.l2.mshr[payload].is_bypass:
                self._l2_fill_debt[(payload // LINE_BYTES) % len(self._l2q)] += 1
            for rid in self.l2.fill(payload, self.now):
                self._at(self.now + self.t_l2_resp, _L1_RESP, rid)
        elif kind == _L1_RESP:
            r = self._pending_fwd.pop(payload)
            if not self.l1s[r.cu].mshr[r.line].is_bypass:
                self._l1_fills[r.cu] = self._l1_fills.get(r.cu, 0) + 1
            for rid in self.l1s[r.cu].fill(r.line, self.now):
                self._complete(rid)
        else:
            self._complete(payload)

    def _kernel_boundary(self, marker: KernelMarker):
        st = self.stats
        if marker.scope == Scope.SYSTEM:
            data: dict = {}
            for la in self.l2.flush_dirty(self.row_key, data):
                st.flush_writes += 1
                self._dram_write(la, data[la])
        if self.policy.policy != Policy.UNCACHED:
            for l1 in self.l1s:
                st.self_invalidated_lines += l1.self_invalidate()
            st.self_invalidated_lines += self.l2.self_invalidate()

    def run(self, trace: Trace) -> RunStats:
        segs = self._segments(trace)
        n = self.config.num_cus
        self._outstanding = [0] * n
        self._inflight: dict = {}
        self._staged: dict = {}
        events = self._events
        seg_i = 0
        self._queues = [deque() for _ in range(n)]
        active: list = []

        step = self.config.dispatch_interval
        start_at = [0] * n

        def load_segment(i):
            for req in segs[i][0]:
                self._queues[req.cu_id].append(req)
            cus = [c for c in range(n) if self._queues[c]]
            for k, c in enumerate(cus):
                start_at[c] = self.now + k * step
            return cus

        if segs:
            active = load_segment(0)
        self.now = 0
        last_event = 0
        while True:
            while events and events[0][0] <= self.now:
                t, _, kind, payload = heapq.heappop(events)
                last_event = t
                self._handle(kind, payload)
            if self._dram_wait:
                self._dram_retry()
            self._l2_process()
            if active:
                still = []
                now = self.now
                for cu in active:
                    if start_at[cu] <= now:
                        self._issue(cu)
                    if self._queues[cu]:
                        still.append(cu)
                active = still
            if self._l1_fills:
                self._l1_fills.clear()
            # kernel barrier
            while seg_i < len(segs) and not active and not any(self._outstanding):
                marker = segs[seg_i][1]
                if marker is not None:
                    self._kernel_boundary(marker)
                seg_i += 1
                if seg_i < len(segs):
                    active = load_segment(seg_i)
            busy = active or self._dram_wait or any(self._l2q) or any(self._l2_fill_debt)
            if busy:
                self.now += 1
            elif events:
                self.now = max(self.now + 1, events[0][0])
            elif seg_i >= len(segs):
                break
            else:
                self.now += 1
        st = self.stats
        st.cycles = max(last_event, self._last_done) if trace.items and st.requests_total else 0
        d = self.dram
        st.dram_reads, st.dram_writes = d.reads, d.writes
        st.read_row_hits, st.read_row_misses = d.read_row_hits, d.read_row_misses
        st.write_row_hits, st.write_row_misses = d.write_row_hits, d.write_row_misses
        return st

    def memory_image(self) -> dict:
        return {a: bytes(b) for a, b in sorted(self.image.items())}


def _with_ab(cfg: CacheConfig, ab: bool) -> CacheConfig:
    if cfg.allocation_bypass == ab:
        return cfg
    d = dict(cfg.__dict__)
    d["allocation_bypass"] = ab
    return CacheConfig(**d)


def run(trace: Trace, engine_config: Optional[EngineConfig] = None,
        policy_config: Optional[PolicyConfig] = None) -> RunStats:
    """Simulate ``trace`` and return its statistics."""
    return Engine(engine_config, policy_config).run(trace)
