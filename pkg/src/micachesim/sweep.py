"""Run the policy matrix over a set of workloads, optionally in parallel."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Optional

from .engine import SWEEP_CELLS, EngineConfig, PolicyConfig, RunStats, run
from .report import SweepResult
from .trace import Trace


class CellFailed(RuntimeError):
    def __init__(self, workload: str, label: str, cause: BaseException):
        super().__init__(f"{workload} / {label}: {type(cause).__name__}: {cause}")
        self.workload = workload
        self.label = label


def _cell(args) -> RunStats:
    trace, cfg, pol = args
    return run(trace, cfg, pol)


def sweep(workloads: dict, engine_config: Optional[EngineConfig] = None,
          cells: Optional[list] = None, parallel: int = 1) -> list:
    """``workloads`` maps name -> Trace.  Returns one SweepResult per
    workload, in input order; results do not depend on ``parallel``."""
    cells = list(cells or SWEEP_CELLS)
    jobs = [(name, pol) for name in workloads for pol in cells]
    args = [(workloads[name], engine_config, pol) for name, pol in jobs]
    results: list = [None] * len(jobs)
    if parallel <= 1:
        for i, a in enumerate(args):
            try:
                results[i] = _cell(a)
            except Exception as e:
                raise CellFailed(jobs[i][0], jobs[i][1].label, e) from e
    else:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futs = [pool.submit(_cell, a) for a in args]
            for i, f in enumerate(futs):
                try:
                    results[i] = f.result()
                except Exception as e:
                    for g in futs:
                        g.cancel()
                    raise CellFailed(jobs[i][0], jobs[i][1].label, e) from e
    out = {name: SweepResult(name) for name in workloads}
    for (name, pol), stats in zip(jobs, results):
        out[name].add(pol.label, stats, pol.flags)
    return list(out.values())


def sweep_one(name: str, trace: Trace, engine_config: Optional[EngineConfig] = None,
              cells: Optional[list] = None) -> SweepResult:
    return sweep({name: trace}, engine_config, cells)[0]


__all__ = ["CellFailed", "PolicyConfig", "sweep", "sweep_one"]
