import csv
import io
import xml.etree.ElementTree as ET

import pytest

from micachesim.engine import RunStats
from micachesim.report import (
    CSV_COLUMNS,
    Category,
    IncompleteSweep,
    MissingBaseline,
    SweepResult,
    chart_values,
    classify,
    emit_chart,
    emit_csv,
    normalize,
)


def stats(cycles, reads=10, writes=0, stalls=0, requests=100, row_hits=5):
    return RunStats(cycles=cycles, dram_reads=reads, dram_writes=writes,
                    cache_stall_cycles=stalls, l1_stall_cycles=stalls,
                    requests_total=requests, read_row_hits=row_hits,
                    read_row_misses=reads - row_hits)


def sweep(name, u, r, rw, **extra):
    sw = SweepResult(name)
    sw.add("Uncached", stats(u))
    sw.add("CacheR", stats(r))
    sw.add("CacheRW", stats(rw), "none")
    for label, cyc in extra.items():
        sw.add(label, stats(cyc), "ab")
    return sw


@pytest.mark.parametrize("cycles,want", [
    ((100, 100, 103), Category.MEMORY_INSENSITIVE),
    ((100, 102, 98), Category.MEMORY_INSENSITIVE),
    ((100, 120, 130), Category.THROUGHPUT_SENSITIVE),
    ((100, 80, 120), Category.REUSE_SENSITIVE),
    ((100, 105, 100), Category.REUSE_SENSITIVE),  # spread of exactly 1.05, and a tie
    ((100, 90, 70), Category.REUSE_SENSITIVE),
])
def test_classification_rule(cycles, want):
    c = classify(sweep("w", *cycles))
    assert c.category == want
    assert c.evidence["Uncached"] == 1.0
    assert c.spread == pytest.approx(max(cycles) / min(cycles))


def test_classify_needs_static_policies():
    sw = SweepResult("w")
    sw.add("Uncached", stats(10))
    with pytest.raises(IncompleteSweep):
        classify(sw)
    with pytest.raises(IncompleteSweep):
        classify(sweep("z", 0, 0, 0))


def test_normalize():
    sw = sweep("w", 200, 100, 50)
    assert normalize(sw, "cycles") == {"Uncached": 1.0, "CacheR": 0.5, "CacheRW": 0.25}
    assert normalize(sw, "row_hit_ratio")["CacheR"] == 0.5
    with pytest.raises(ValueError):
        normalize(sw, "bogus")
    nob = SweepResult("nob")
    nob.add("CacheR", stats(5))
    with pytest.raises(MissingBaseline):
        normalize(nob, "cycles")
    zero = SweepResult("zero")
    zero.add("Uncached", stats(5, reads=0, row_hits=0))
    zero.add("CacheR", stats(5, reads=0, row_hits=0))
    assert normalize(zero, "dram_accesses") == {"Uncached": None, "CacheR": None}


def test_csv_layout_and_na():
    zero = SweepResult("zero")
    zero.add("Uncached", stats(5, reads=0, row_hits=0))
    buf = io.StringIO()
    n = emit_csv([sweep("w", 200, 100, 50, **{"CacheRW-AB": 40}), zero], buf)
    assert n == 5
    rows = list(csv.DictReader(io.StringIO(buf.getvalue())))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [r["policy"] for r in rows] == ["Uncached", "CacheR", "CacheRW", "CacheRW-AB",
                                           "Uncached"]
    assert rows[3]["norm_cycles"] == "0.2" and rows[3]["flags"] == "ab"
    assert rows[4]["norm_dram_accesses"] == "NA"
    assert rows[4]["row_hit_ratio"] == "0"
    with pytest.raises(ValueError):
        emit_csv([], io.StringIO())


def svg_of(sweeps, metric, **kw):
    buf = io.StringIO()
    emit_chart(sweeps, metric, buf, **kw)
    return buf.getvalue()


def test_chart_is_deterministic_svg():
    sws = [sweep("a", 100, 80, 90), sweep("b", 50, 60, 70)]
    one = svg_of(sws, "cycles")
    assert one == svg_of(sws, "cycles")
    root = ET.fromstring(one)
    assert root.tag.endswith("svg")
    assert "bars-CacheR" in one and "normalized to Uncached" in one


def test_stall_chart_log_axis_labels_zero():
    sw = sweep("a", 100, 80, 90)
    sw.runs["CacheR"] = stats(80, stalls=300)
    sw.runs["CacheRW"] = stats(90, stalls=2)
    text = svg_of([sw], "stalls_per_request")
    assert ">0<" in text
    _, labels, values = chart_values([sw], "stalls_per_request")
    assert values["a"] == {"Uncached": 0.0, "CacheR": 3.0, "CacheRW": 0.02}
    linear = svg_of([sw], "stalls_per_request", log=False)
    assert linear != text


def test_chart_rejects_empty():
    with pytest.raises(ValueError):
        svg_of([], "cycles")
