import pytest

from micachesim import EngineConfig, PRESETS, fixtures, generate, run
from micachesim.engine import (
    SWEEP_CELLS,
    Engine,
    Latencies,
    Policy,
    PolicyConfig,
    PolicyError,
    RunStats,
    route,
    tag_port_admit,
)
from micachesim.generators import LayerSpec
from micachesim.trace import KernelMarker, Kind, MemAccess, Scope, Trace, store_payload

from oracles import flat_memory

FAR = 1 << 27


def load(seq, addr, cu=0, kernel=0, pc=0x10):
    return MemAccess(seq, pc, addr, 4, Kind.LOAD, cu, kernel)


def conservation(s: RunStats):
    assert s.requests_total == s.loads + s.stores
    assert s.l1_hits + s.l1_misses + s.l1_bypasses + s.l1_coalesced == s.requests_total
    assert s.l1_misses + s.l1_bypasses == (s.l2_hits + s.l2_misses + s.l2_bypasses
                                           + s.l2_coalesced)
    assert s.coalesced_count == s.l1_coalesced + s.l2_coalesced
    assert s.dram_reads == s.fetch_reads + s.bypass_reads
    assert s.dram_writes == s.bypass_writes + s.writebacks + s.flush_writes + s.rinse_writes
    assert s.read_row_hits + s.read_row_misses == s.dram_reads
    assert s.write_row_hits + s.write_row_misses == s.dram_writes
    assert s.cache_stall_cycles == s.l1_stall_cycles + s.l2_stall_cycles


def test_route_table():
    ld, st = load(0, 0), MemAccess(1, 0, 0, 4, Kind.STORE, 0, 0)
    cells = {
        "uncached": ((False, False), (False, False)),
        "cacher": ((True, True), (False, False)),
        "cacherw": ((True, True), (False, True)),
    }
    for name, (want_ld, want_st) in cells.items():
        p = PRESETS[name]
        assert (route(p, ld).l1_cacheable, route(p, ld).l2_cacheable) == want_ld
        assert (route(p, st).l1_cacheable, route(p, st).l2_cacheable) == want_st


def test_policy_labels_and_rules():
    assert [c.label for c in SWEEP_CELLS] == [
        "Uncached", "CacheR", "CacheRW", "CacheRW-AB", "CacheRW-CR", "CacheRW-PCby"]
    assert PolicyConfig("cacherw", pc_bypass=True).label == "CacheRW+pcby"
    with pytest.raises(PolicyError):
        PolicyConfig("cacher", cache_rinse=True)
    with pytest.raises(PolicyError):
        PolicyConfig("uncached", allocation_bypass=True)
    assert PolicyConfig(Policy.CACHE_R, allocation_bypass=True).flags == "ab"


def test_tag_port_admit():
    lines = [0x00, 0x40, 0x80, 0xC0, 0x100]
    assert tag_port_admit(lines, 2) == (lines[:2], lines[2:])
    adm, stalled = tag_port_admit(lines, 2, banks=2)
    assert adm == [0x00, 0x40] and stalled == [0x80, 0xC0, 0x100]
    adm, _ = tag_port_admit([0x00, 0x80, 0x40], 2, banks=2)
    assert adm == [0x00, 0x40]


def test_uncontended_latencies():
    cfg = EngineConfig(max_outstanding_per_cu=1)
    t = Trace([load(0, FAR), load(1, FAR + 4), load(2, FAR + 64, cu=1),
               load(3, FAR, cu=1), KernelMarker(0, Scope.SYSTEM)])
    e = Engine(cfg, PRESETS["cacher"], record_latency=True)
    e.run(t)
    assert e.latencies == {0: 225, 1: 50, 2: 225, 3: 125}
    u = Engine(cfg, PRESETS["uncached"], record_latency=True)
    u.run(t)
    # no L1 copy, but the DRAM row is still open
    assert u.latencies[1] == 225 - (50 - 10)


def test_empty_trace():
    s = run(Trace())
    assert s == RunStats()
    s = run(Trace([KernelMarker(0, Scope.SYSTEM)]), policy_config=PRESETS["cacherw"])
    assert s.cycles == 0 and s.requests_total == 0


@pytest.mark.parametrize("cell", SWEEP_CELLS, ids=lambda c: c.label)
def test_identities_hold_everywhere(cell):
    t = fixtures.random_trace(1500, seed=4)
    s = run(t, policy_config=cell)
    conservation(s)
    assert s.requests_total == sum(1 for _ in t.accesses())
    if cell.policy == Policy.UNCACHED:
        assert s.l1_hits == s.l2_hits == 0
        assert s.dram_writes == s.stores
    if cell.policy == Policy.CACHE_R:
        assert s.dram_writes == s.stores
    if not cell.pc_bypass:
        assert s.bypass_decisions_cache == s.bypass_decisions_bypass == 0


@pytest.mark.parametrize("cell", SWEEP_CELLS, ids=lambda c: c.label)
def test_memory_image_matches_program_order(cell):
    t = fixtures.random_trace(1200, seed=9)
    e = Engine(EngineConfig(), cell)
    e.run(t)
    assert e.memory_image() == flat_memory(t, store_payload)


def test_runs_are_deterministic():
    t = generate(LayerSpec("fully_connected", (128, 64), batch=4))
    for cell in SWEEP_CELLS:
        assert run(t, policy_config=cell) == run(t, policy_config=cell)


def test_system_scope_flushes_dirty_lines():
    st = [MemAccess(i, 0, FAR + 64 * i, 64, Kind.STORE, 0, 0) for i in range(10)]
    kernel_only = run(Trace(st + [KernelMarker(0, Scope.KERNEL)]),
                      policy_config=PRESETS["cacherw"])
    system = run(Trace(st + [KernelMarker(0, Scope.SYSTEM)]),
                 policy_config=PRESETS["cacherw"])
    assert kernel_only.dram_writes == 0
    assert system.flush_writes == system.dram_writes == 10


def test_kernel_boundary_self_invalidates():
    t = Trace([load(0, FAR), KernelMarker(0, Scope.KERNEL),
               load(1, FAR, kernel=1), KernelMarker(1, Scope.SYSTEM)])
    s = run(t, policy_config=PRESETS["cacher"])
    assert s.l1_hits == s.l2_hits == 0
    # one L1 and one L2 copy dropped at each of the two markers
    assert s.dram_reads == 2 and s.self_invalidated_lines == 4
    same = Trace([load(0, FAR), load(1, FAR + 8), KernelMarker(0, Scope.SYSTEM)])
    s = run(same, EngineConfig(max_outstanding_per_cu=1), PRESETS["cacher"])
    assert s.l1_hits == 1 and s.dram_reads == 1


def test_busy_set_stalls_and_allocation_bypass():
    t = fixtures.busy_set_trace()
    rw = run(t, policy_config=PRESETS["cacherw"])
    ab = run(t, policy_config=PRESETS["cacherw-ab"])
    conservation(rw)
    conservation(ab)
    assert rw.cache_stall_cycles > 0 and ab.cache_stall_cycles == 0
    assert rw.dram_reads == ab.dram_reads == 8 * 64


def test_outstanding_limit_serializes():
    row_stride = 64 * 16 * 16 * 32  # same bank, next row
    t = Trace([load(i, FAR + row_stride * i) for i in range(8)] + [KernelMarker(0)])
    one = run(t, EngineConfig(max_outstanding_per_cu=1))
    many = run(t, EngineConfig())
    assert 8 * 225 <= one.cycles <= 8 * 226
    # back to back in one bank: the first at idle latency, the rest one row miss apart
    assert many.cycles <= 225 + 7 * 54 + 8


def test_engine_config_validation():
    with pytest.raises(ValueError):
        EngineConfig(latencies=Latencies(l1=50, l2=40, mem=225)).validate()
    with pytest.raises(ValueError):
        EngineConfig(latencies=Latencies(l1=5, l2=200, mem=225)).validate()
    with pytest.raises(ValueError):
        EngineConfig(num_cus=0).validate()
    with pytest.raises(ValueError):
        Engine(EngineConfig(l2_tag_banks=0))


def test_stats_dict_round_trip():
    s = run(fixtures.random_trace(300, seed=1), policy_config=PRESETS["cacherw-cr"])
    assert RunStats.from_dict(s.to_dict()) == s
    assert 0.0 <= s.row_hit_ratio <= 1.0


@pytest.mark.parametrize("num_cus", [1, 64])
def test_uncached_streaming_row_hits_match_closed_form(num_cus):
    # src and dst together fit in one row span of every bank, so each bank sees
    # one open row per 32 columns whatever the interleaving
    t = generate(LayerSpec("streaming", (65536,), num_cus=num_cus))
    s = run(t, policy_config=PRESETS["uncached"])
    assert abs(s.row_hit_ratio - 31 / 32) <= 0.02
