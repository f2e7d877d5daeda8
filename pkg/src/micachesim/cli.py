"""micachesim command line: gen, run and sweep.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage error.
``MICACHESIM_SEED`` overrides the default generator seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import fixtures
from .config import ConfigError, SimConfig, defaults_text, load_config
from .engine import PRESETS, Policy, PolicyConfig, PolicyError, RunStats, run
from .generators import LayerKind, LayerSpec, generate
from .report import METRICS, classify, emit_chart, emit_csv
from .sweep import CellFailed, sweep
from .trace import LINE_BYTES, Kind, TraceError, format_text, read_trace, write_trace

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SEED_ENV = "MICACHESIM_SEED"


class UsageError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw, 0)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _dims(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.replace("x", ",").split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dimension list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="micachesim",
                                description="GPU cache policy simulator for MI-style traces")
    p.add_argument("--print-defaults", action="store_true",
                   help="print the default config file and exit")
    sub = p.add_subparsers(dest="cmd")

    g = sub.add_parser("gen", help="generate a synthetic layer trace")
    g.add_argument("--layer", required=True, choices=[k.value for k in LayerKind])
    g.add_argument("--dims", required=True, type=_dims, help="comma-separated dimensions")
    g.add_argument("--batch", type=int, default=1)
    g.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")
    g.add_argument("--element-bytes", type=int, default=4, choices=(4, 8))
    g.add_argument("--num-cus", type=int, default=64)
    g.add_argument("--pc-base", type=lambda s: int(s, 0), default=0x1000)
    g.add_argument("--lds-filter", type=float, default=1.0)
    g.add_argument("--text", action="store_true", help="write the text form")
    g.add_argument("--out", required=True)

    r = sub.add_parser("run", help="simulate one trace under one policy")
    r.add_argument("--trace", required=True)
    r.add_argument("--policy", choices=[x.value for x in Policy])
    r.add_argument("--preset", choices=sorted(PRESETS))
    r.add_argument("--ab", action="store_true", help="allocation bypass")
    r.add_argument("--cr", action="store_true", help="cache rinsing")
    r.add_argument("--pcby", action="store_true", help="PC-based L2 bypass")
    r.add_argument("--config")
    r.add_argument("--format", choices=("kv", "json"), default="kv")
    r.add_argument("--out")

    s = sub.add_parser("sweep", help="run the six-cell policy matrix")
    s.add_argument("--trace", action="append", default=[], help="repeatable")
    s.add_argument("--matrix", action="store_true",
                   help="add the built-in seven-workload matrix")
    s.add_argument("--seed", type=int, default=None, help="seed for --matrix")
    s.add_argument("--config")
    s.add_argument("--parallel", type=int, default=1)
    s.add_argument("--outdir", required=True)
    return p


def stats_lines(stats: RunStats) -> list:
    d = stats.to_dict()
    for k in ("dram_accesses", "row_hit_ratio", "read_row_hit_ratio",
              "write_row_hit_ratio", "stalls_per_request"):
        d[k] = getattr(stats, k)
    return [f"{k}={format(v, '.10g') if isinstance(v, float) else v}"
            for k, v in sorted(d.items())]


def _config(path) -> SimConfig:
    return load_config(path) if path else SimConfig()


def _policy(args, cfg: SimConfig) -> PolicyConfig:
    if args.preset and (args.policy or args.ab or args.cr or args.pcby):
        raise UsageError("--preset cannot be combined with --policy or optimization flags")
    if args.preset:
        return PRESETS[args.preset]
    if not args.policy:
        raise UsageError("one of --policy or --preset is required")
    try:
        return PolicyConfig(args.policy,
                            args.ab or cfg.allocation_bypass,
                            args.cr or cfg.cache_rinse,
                            args.pcby or cfg.pc_bypass)
    except PolicyError as e:
        raise UsageError(str(e)) from None


def _read(path):
    with open(path, "rb") as f:
        return read_trace(f)


def cmd_gen(args, out) -> int:
    seed = args.seed if args.seed is not None else default_seed()
    spec = LayerSpec(args.layer, args.dims, element_bytes=args.element_bytes,
                     batch=args.batch, seed=seed, num_cus=args.num_cus,
                     pc_base=args.pc_base, lds_filter=args.lds_filter)
    trace = generate(spec)
    if args.text:
        Path(args.out).write_text(format_text(trace), encoding="utf-8")
    else:
        with open(args.out, "wb") as f:
            write_trace(trace, f)
    loads = [a for a in trace.accesses() if a.kind == Kind.LOAD]
    stores = [a for a in trace.accesses() if a.kind == Kind.STORE]
    load_lines = {a.addr // LINE_BYTES for a in loads}
    store_lines = {a.addr // LINE_BYTES for a in stores}
    reuse = len(loads) / len(load_lines) if load_lines else 0.0
    print(f"layer={spec.layer_kind.value} dims={','.join(map(str, spec.dims))} "
          f"batch={spec.batch} seed={seed}", file=out)
    print(f"records={len(trace.items)} loads={len(loads)} stores={len(stores)} "
          f"kernels={sum(1 for _ in trace.markers())}", file=out)
    print(f"distinct_lines={len(load_lines | store_lines)} load_lines={len(load_lines)} "
          f"store_lines={len(store_lines)} reuse_degree={reuse:.3f}", file=out)
    return EXIT_OK


def cmd_run(args, out) -> int:
    cfg = _config(args.config)
    pol = _policy(args, cfg)
    stats = run(_read(args.trace), cfg.engine, pol)
    if args.format == "json":
        d = stats.to_dict()
        d["policy"] = pol.label
        text = json.dumps(d, sort_keys=True, indent=1) + "\n"
    else:
        text = "".join(line + "\n" for line in [f"policy={pol.label}"] + stats_lines(stats))
    out.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_sweep(args, out) -> int:
    if not args.trace and not args.matrix:
        raise UsageError("give at least one --trace or --matrix")
    if args.parallel < 1:
        raise UsageError("--parallel must be >= 1")
    cfg = _config(args.config)
    workloads = {}
    for path in args.trace:
        name = Path(path).stem
        if name in workloads:
            raise UsageError(f"two traces named {name!r}")
        workloads[name] = _read(path)
    if args.matrix:
        seed = args.seed if args.seed is not None else default_seed()
        for name, spec in fixtures.matrix(seed).items():
            if name in workloads:
                raise UsageError(f"trace name {name!r} clashes with a matrix workload")
            workloads[name] = generate(spec)
    results = sweep(workloads, cfg.engine, parallel=args.parallel)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "sweep.csv", "w", encoding="utf-8", newline="") as f:
        emit_csv(results, f)
    for metric in METRICS:
        with open(outdir / f"{metric}.svg", "w", encoding="utf-8") as f:
            emit_chart(results, metric, f)
    lines = []
    for sw in results:
        c = classify(sw)
        ev = " ".join(f"{k}={v:.4f}" for k, v in c.evidence.items())
        lines.append(f"{sw.workload}: {c.category.value} ({ev})")
    text = "".join(x + "\n" for x in lines)
    (outdir / "classification.txt").write_text(text, encoding="utf-8")
    out.write(text)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "sweep": cmd_sweep}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    if args.print_defaults:
        out.write(defaults_text())
        return EXIT_OK
    if not args.cmd:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.cmd](args, out)
    except (UsageError, ConfigError) as e:
        print(f"micachesim: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TraceError, CellFailed, OSError, ValueError) as e:
        print(f"micachesim: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
