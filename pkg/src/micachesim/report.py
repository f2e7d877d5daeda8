"""Sweep aggregation: normalization against Uncached, workload
classification, CSV tables and grouped bar charts."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, TextIO

from .engine import STATIC_LABELS, RunStats

BASELINE = "Uncached"
METRICS = ("cycles", "dram_accesses", "stalls_per_request", "row_hit_ratio")
RAW_METRICS = ("row_hit_ratio",)
INSENSITIVE_SPREAD = 1.05

CSV_COLUMNS = (
    "workload", "policy", "flags",
    "cycles", "norm_cycles",
    "dram_reads", "dram_writes", "dram_accesses", "norm_dram_accesses",
    "cache_stall_cycles", "stalls_per_request",
    "row_hit_ratio", "read_row_hit_ratio", "write_row_hit_ratio",
    "requests_total", "l1_hits", "l1_misses", "l2_hits", "l2_misses",
    "coalesced_count", "rinse_writes", "bypass_decisions_cache", "bypass_decisions_bypass",
)


class MissingBaseline(KeyError):
    pass


class IncompleteSweep(KeyError):
    pass


class Category(str, enum.Enum):
    MEMORY_INSENSITIVE = "MemoryInsensitive"
    REUSE_SENSITIVE = "ReuseSensitive"
    THROUGHPUT_SENSITIVE = "ThroughputSensitive"


@dataclass
class SweepResult:
    """Runs of one workload, keyed by policy label (``PolicyConfig.label``)."""
    workload: str
    runs: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def add(self, label: str, stats: RunStats, flags: str = "none"):
        self.runs[label] = stats
        self.flags[label] = flags


@dataclass(frozen=True)
class Classification:
    workload: str
    category: Category
    evidence: dict  # static label -> cycles normalized to Uncached

    @property
    def spread(self) -> float:
        v = list(self.evidence.values())
        return max(v) / min(v)


def metric_value(stats: RunStats, metric: str) -> float:
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    return float(getattr(stats, metric))


def normalize(sweep: SweepResult, metric: str) -> dict:
    """label -> metric / baseline metric, or None where the baseline is zero.
    Row hit ratios are passed through unnormalized."""
    if BASELINE not in sweep.runs:
        raise MissingBaseline(f"{sweep.workload}: no {BASELINE} run to normalize against")
    if metric in RAW_METRICS:
        return {k: metric_value(s, metric) for k, s in sweep.runs.items()}
    base = metric_value(sweep.runs[BASELINE], metric)
    if base <= 0:
        return {k: None for k in sweep.runs}
    return {k: metric_value(s, metric) / base for k, s in sweep.runs.items()}


def classify(sweep: SweepResult) -> Classification:
    missing = [p for p in STATIC_LABELS if p not in sweep.runs]
    if missing:
        raise IncompleteSweep(f"{sweep.workload}: missing static policies {missing}")
    cyc = {p: sweep.runs[p].cycles for p in STATIC_LABELS}
    base = cyc[BASELINE]
    if base <= 0 or min(cyc.values()) <= 0:
        raise IncompleteSweep(f"{sweep.workload}: zero-cycle run cannot be classified")
    norm = {p: c / base for p, c in cyc.items()}
    if max(norm.values()) / min(norm.values()) < INSENSITIVE_SPREAD:
        cat = Category.MEMORY_INSENSITIVE
    elif all(norm[BASELINE] < norm[p] for p in STATIC_LABELS if p != BASELINE):
        cat = Category.THROUGHPUT_SENSITIVE
    else:
        cat = Category.REUSE_SENSITIVE
    return Classification(sweep.workload, cat, norm)


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def csv_rows(sweeps: Iterable[SweepResult]) -> list:
    rows = []
    for sw in sweeps:
        norm_c = normalize(sw, "cycles") if BASELINE in sw.runs else {}
        norm_d = normalize(sw, "dram_accesses") if BASELINE in sw.runs else {}
        for label, s in sw.runs.items():
            rows.append({
                "workload": sw.workload, "policy": label, "flags": sw.flags.get(label, ""),
                "cycles": s.cycles, "norm_cycles": norm_c.get(label),
                "dram_reads": s.dram_reads, "dram_writes": s.dram_writes,
                "dram_accesses": s.dram_accesses, "norm_dram_accesses": norm_d.get(label),
                "cache_stall_cycles": s.cache_stall_cycles,
                "stalls_per_request": s.stalls_per_request,
                "row_hit_ratio": s.row_hit_ratio,
                "read_row_hit_ratio": s.read_row_hit_ratio,
                "write_row_hit_ratio": s.write_row_hit_ratio,
                "requests_total": s.requests_total,
                "l1_hits": s.l1_hits, "l1_misses": s.l1_misses,
                "l2_hits": s.l2_hits, "l2_misses": s.l2_misses,
                "coalesced_count": s.coalesced_count, "rinse_writes": s.rinse_writes,
                "bypass_decisions_cache": s.bypass_decisions_cache,
                "bypass_decisions_bypass": s.bypass_decisions_bypass,
            })
    return rows


def emit_csv(sweeps: Iterable[SweepResult], sink: TextIO) -> int:
    """Write one row per (workload, policy); returns the number of data rows."""
    rows = csv_rows(sweeps)
    if not rows:
        raise ValueError("nothing to report: empty sweep")
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return len(rows)


def chart_values(sweeps: list, metric: str) -> tuple:
    """(workloads, labels, values[workload][label]) as plotted.  Cycles and
    DRAM accesses are normalized to Uncached; stalls per request and row hit
    ratios are plotted raw."""
    labels: list = []
    for sw in sweeps:
        for k in sw.runs:
            if k not in labels:
                labels.append(k)
    values = {}
    for sw in sweeps:
        if metric in ("cycles", "dram_accesses"):
            values[sw.workload] = normalize(sw, metric)
        else:
            values[sw.workload] = {k: metric_value(s, metric) for k, s in sw.runs.items()}
    return [sw.workload for sw in sweeps], labels, values


def emit_chart(sweeps: Iterable[SweepResult], metric: str, sink: TextIO,
               log: Optional[bool] = None) -> None:
    """Grouped bar chart as a self-contained SVG.

    ``log`` defaults to True for stalls per request.  On a log axis zero
    values are drawn at the axis floor and labelled "0".
    """
    import matplotlib
    matplotlib.use("Agg")
    from matplotlib.figure import Figure

    sweeps = list(sweeps)
    if not sweeps:
        raise ValueError("nothing to chart: empty sweep")
    if log is None:
        log = metric == "stalls_per_request"
    workloads, labels, values = chart_values(sweeps, metric)

    positive = [v for row in values.values() for v in row.values() if v]
    floor = 10 ** math.floor(math.log10(min(positive))) / 10 if positive else 0.01

    fig = Figure(figsize=(max(6.0, 1.2 * len(workloads) * max(1, len(labels)) / 3), 4.0))
    ax = fig.add_subplot()
    width = 0.8 / max(1, len(labels))
    for j, label in enumerate(labels):
        xs, hs, notes = [], [], []
        for i, wl in enumerate(workloads):
            v = values[wl].get(label)
            x = i + (j - (len(labels) - 1) / 2) * width
            if v is None:
                notes.append((x, "n/a"))
                continue
            if log and v <= 0:
                notes.append((x, "0"))
                v = floor
            xs.append(x)
            hs.append(v - floor if log else v)
        ax.bar(xs, hs, width, label=label, bottom=floor if log else 0,
               gid=f"bars-{label}")
        for x, text in notes:
            ax.text(x, floor if log else 0, text, ha="center", va="bottom", fontsize=7)
    if log:
        ax.set_yscale("log")
        ax.set_ylim(bottom=floor)
    ax.set_xticks(range(len(workloads)))
    ax.set_xticklabels(workloads, rotation=20, ha="right")
    normed = metric in ("cycles", "dram_accesses")
    ax.set_ylabel(f"{metric} (normalized to {BASELINE})" if normed else metric)
    ax.legend(fontsize=7, ncol=min(3, max(1, len(labels))))
    fig.tight_layout()

    buf = io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": "micachesim", "svg.fonttype": "none"}):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    sink.write(buf.getvalue())
