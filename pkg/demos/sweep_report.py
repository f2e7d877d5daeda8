"""
A policy sweep with CSV and SVG output
======================================

Runs the six-cell policy matrix on three small layers, classifies each layer
and writes the report files.  Usage: ``python demos/sweep_report.py [outdir]``.
"""

import sys
from pathlib import Path

from micachesim import LayerSpec, classify, emit_chart, emit_csv, generate
from micachesim.report import METRICS
from micachesim.sweep import sweep

outdir = Path(sys.argv[1] if len(sys.argv) > 1 else "sweep_out")
outdir.mkdir(parents=True, exist_ok=True)

# The streaming layer is kept small so the demo runs quickly.  At this size
# the L2 absorbs the burst and caching does not hurt; the throughput-sensitive
# behaviour needs a larger layer (see policy_tour.py).
workloads = {
    "fc": generate(LayerSpec("fully_connected", (256, 128), batch=8)),
    "gemm": generate(LayerSpec("gemm_tiled", (64, 64, 128, 32))),
    "stream": generate(LayerSpec("streaming", (65536,))),
}

# One SweepResult per workload, each holding six RunStats keyed by policy label.
results = sweep(workloads)

for sw in results:
    c = classify(sw)
    print(f"{sw.workload:8s} {c.category.value:20s} spread {c.spread:.3f}")

with open(outdir / "sweep.csv", "w", newline="", encoding="utf-8") as f:
    emit_csv(results, f)
for metric in METRICS:
    with open(outdir / f"{metric}.svg", "w", encoding="utf-8") as f:
        emit_chart(results, metric, f)
print(f"wrote {outdir}/sweep.csv and {len(METRICS)} charts")
