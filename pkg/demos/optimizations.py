"""
Allocation bypass, cache rinsing and PC-based bypass
====================================================

Each optimization gets a small trace built to expose the one effect it
targets.  Run with ``python demos/optimizations.py`` (about a minute).
"""

from micachesim import PRESETS, fixtures, run

# Allocation bypass: every CU hammers one cache set with distinct lines, so
# each set fills with lines still waiting for DRAM.  Without the bypass the
# next miss stalls until a fill arrives.
t = fixtures.busy_set_trace()
for key in ("cacherw", "cacherw-ab"):
    s = run(t, policy_config=PRESETS[key])
    print(f"busy set   {PRESETS[key].label:12s} stalls/request {s.stalls_per_request:7.3f}"
          f"  dram {s.dram_accesses}")

# Cache rinsing: shuffled full-line stores larger than the L2.  Evicting a dirty
# line also writes back its DRAM-row neighbours, so writes arrive row by row.
t = fixtures.scattered_store_trace()
for key in ("cacherw-ab", "cacherw-cr"):
    s = run(t, policy_config=PRESETS[key])
    print(f"scattered  {PRESETS[key].label:12s} write row hits {s.write_row_hit_ratio:.3f}"
          f"  writes {s.dram_writes}  rinsed {s.rinse_writes}")

# PC-based bypass: a streaming kernel and a fully connected kernel alternate.
# The predictor learns that the streaming load PC never sees L2 reuse.
t = fixtures.mixed_trace(rounds=2, stream_elems=65536)
for key in ("uncached", "cacher", "cacherw", "cacherw-pcby"):
    s = run(t, policy_config=PRESETS[key])
    print(f"mixed      {PRESETS[key].label:12s} cycles {s.cycles:7d}"
          f"  bypassed {s.bypass_decisions_bypass}")
