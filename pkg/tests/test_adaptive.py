import pytest
from hypothesis import given, settings, strategies as st

from micachesim import EngineConfig, PRESETS, fixtures
from micachesim.adaptive import (
    Decision,
    DirtyBlockIndex,
    L2Sidecars,
    PredictorTable,
    ReuseTracker,
    audit,
)
from micachesim.cache import Cache, CacheConfig, Result, WritePolicy
from micachesim.engine import Engine
from micachesim.trace import Kind, MemAccess


def row4(addr):
    return addr // (4 * 64)


def test_dbi_groups_by_row():
    dbi = DirtyBlockIndex(row4)
    for a in (0x000, 0x040, 0x0C0, 0x100):
        dbi.mark(a)
    assert len(dbi) == 4 and 0x040 in dbi and 0x080 not in dbi
    assert dbi.on_dirty_evict(0x040) == [0x000, 0x0C0]
    assert dbi.lines() == {0x100}
    dbi.clear(0x100)
    dbi.clear(0x100)
    assert len(dbi) == 0 and not dbi.rows


def test_empty_index_is_still_an_index():
    # guards against truthiness checks on the sidecar
    assert len(DirtyBlockIndex(row4)) == 0
    assert DirtyBlockIndex(row4) is not None


ops = st.lists(st.tuples(st.sampled_from("lsfix"), st.integers(0, 63)), max_size=250)


@settings(max_examples=120, deadline=None)
@given(ops)
def test_dbi_tracks_cache_dirty_set(seq):
    dbi = DirtyBlockIndex(row4)
    cfg = CacheConfig(size_bytes=2 * 8 * 64, associativity=2,
                      write_policy=WritePolicy.COALESCE_DIRTY)
    c = Cache(cfg, observer=L2Sidecars(dbi=dbi))
    for n, (op, line) in enumerate(seq):
        addr = line * 64
        if op == "f":
            if c.mshr:
                c.fill(next(iter(c.mshr)))
        elif op == "i":
            c.self_invalidate()
        elif op == "x":
            c.flush_dirty(row_key=row4)
        else:
            kind = Kind.LOAD if op == "l" else Kind.STORE
            out = c.access(MemAccess(n, 0, addr, 4, kind, 0, 0), True)
            ev = out.evicted
            if ev is not None and ev.was_dirty:
                for other in dbi.on_dirty_evict(ev.line_addr):
                    c.rinse(other)
        assert audit(dbi, c) == 0


def test_audit_counts_discrepancies():
    dbi = DirtyBlockIndex(row4)
    c = Cache(CacheConfig(size_bytes=1024, associativity=2,
                          write_policy=WritePolicy.COALESCE_DIRTY))
    c.access(MemAccess(0, 0, 0x40, 4, Kind.STORE, 0, 0), True)
    dbi.mark(0x80)
    assert audit(dbi, c) == 2


def test_predictor_counter_walk():
    p = PredictorTable(entries=16, counter_bits=2, threshold=2)
    assert p.decide(0x40) == Decision.CACHE
    p.train(0x40, False)
    assert p.decide(0x40) == Decision.BYPASS
    for _ in range(10):
        p.train(0x40, False)
    assert p.counters[p.index(0x40)] == 0
    p.train(0x40, True)
    p.train(0x40, True)
    assert p.decide(0x40) == Decision.CACHE
    for _ in range(10):
        p.train(0x40, True)
    assert p.counters[p.index(0x40)] == 3


def test_predictor_aliasing_shares_counter():
    p = PredictorTable(entries=1024)
    a, b = 5, (1 << 10) | 4  # both fold to index 5
    assert p.index(a) == p.index(b) == 5
    p.train(a, False)
    assert p.decide(b) == Decision.BYPASS
    assert p.decide(6) == Decision.CACHE


def test_predictor_rejects_bad_sizes():
    with pytest.raises(ValueError):
        PredictorTable(entries=1000)
    with pytest.raises(ValueError):
        PredictorTable(counter_bits=2, threshold=9)
    assert PredictorTable(entries=1).index(0xDEADBEEF) == 0


def test_tracker_trains_at_end_of_life():
    p = PredictorTable(entries=16)
    t = ReuseTracker(p)
    t.insert(0x40, pc=1)
    t.insert(0x80, pc=2)
    t.touch(0x40)
    t.end(0x40)
    t.end(0x80)
    t.end(0xC0)  # never inserted
    assert (t.events, t.reused_events) == (2, 1)
    assert p.counters[p.index(1)] == 3 and p.counters[p.index(2)] == 1


def test_sidecars_see_l2_hits_and_ends():
    p = PredictorTable(entries=16)
    tr = ReuseTracker(p)
    c = Cache(CacheConfig(size_bytes=1024, associativity=2), observer=L2Sidecars(tracker=tr))
    out = c.access(MemAccess(0, 7, 0x40, 4, Kind.LOAD, 0, 0), True)
    assert out.result == Result.MISS_ALLOCATED
    c.fill(0x40)
    c.access(MemAccess(1, 9, 0x40, 4, Kind.LOAD, 0, 0), True)
    c.self_invalidate()
    assert tr.reused_events == 1 and p.counters[p.index(7)] == 3


def test_mixed_trace_census():
    t = fixtures.mixed_trace(rounds=2, stream_elems=32768)
    e = Engine(EngineConfig(), PRESETS["cacherw-pcby"])
    s = e.run(t)
    # streamed input lines are never re-read in the L2, so their pc learns to bypass
    assert e.predictor.decide(fixtures.MIXED_STREAM_PC) == Decision.BYPASS
    assert s.bypass_decisions_bypass > 0 and s.bypass_decisions_cache > 0
    assert s.bypass_decisions_cache + s.bypass_decisions_bypass == s.requests_total
    assert 0 < e.tracker.reused_events < e.tracker.events
