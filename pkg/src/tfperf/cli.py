"""Command-line surface: config ingestion, experiments, report emission.

Reports carry a schema_version and a generated_by echo. CSV output is plain
comma separation with '.' decimals; JSON keeps insertion key order and
round-trips losslessly. Exit codes: 0 ok, 2 bad config, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

from . import mapspace
from .archsearch import CostCache, DEFAULT_SPACE, evolve, space_from_json
from .fusion import PAIR_NAMES, fusion_sweep
from .hwmodel import (InfeasibleConfigError, _wide_flags, accel_from_json,
                      accel_preset, memory_split_sweep, model_costs,
                      model_nonideal_intensity, nonideal_intensity)
from .workload import (ConfigError, category_of, flops, intensity, model_from_json,
                       model_ops, model_preset, mops)

SCHEMA_VERSION = "1"


def _load_model(name: str, seq_len: int):
    if name.endswith(".json") or os.path.sep in name:
        with open(name, encoding="utf-8") as f:
            return model_from_json(f.read(), seq_len=seq_len)
    return model_preset(name, seq_len=seq_len)


def _load_accel(name: str):
    if name.endswith(".json") or os.path.sep in name:
        with open(name, encoding="utf-8") as f:
            return accel_from_json(f.read())
    return accel_preset(name)


# ---------------------------------------------------------------------------
# Command handlers: each returns (rows, columns, extra-report-keys)
# ---------------------------------------------------------------------------

def cmd_analyze(args):
    cfg = _load_model(args.model, args.seqlen)
    cnn = cfg.name == "resnet50"
    cols = ["name", "op_class", "category", "flops", "mops", "arithmetic_intensity"]
    rows = []
    for op in model_ops(cfg):
        f, m = flops(op), mops(op)
        rows.append({"name": op.name, "op_class": op.op_class.value,
                     "category": category_of(op, cnn=cnn),
                     "flops": f, "mops": m,
                     "arithmetic_intensity": intensity(f, m)})
    return rows, cols, {}


def cmd_latency(args):
    cfg = _load_model(args.model, args.seqlen)
    accel = _load_accel(args.accel)
    cols = ["name", "op_class", "latency_cycles", "energy_pj", "compute_bound"]
    rows = []
    lat = energy = 0.0
    for op, rep in model_costs(cfg, accel):
        rows.append({"name": op.name, "op_class": op.op_class.value,
                     "latency_cycles": rep.latency, "energy_pj": rep.energy,
                     "compute_bound": rep.compute_bound})
        lat += rep.latency
        energy += rep.energy
    rows.append({"name": "total", "op_class": "", "latency_cycles": lat,
                 "energy_pj": energy, "compute_bound": ""})
    return rows, cols, {}


def cmd_nonideal_ai(args):
    cfg = _load_model(args.model, args.seqlen)
    accel = _load_accel(args.accel)
    ops = model_ops(cfg)
    cols = ["name", "flops", "ideal_ai", "nonideal_ai"]
    rows = []
    for op, wide in zip(ops, _wide_flags(ops)):
        f, m = flops(op), mops(op)
        rows.append({"name": op.name, "flops": f, "ideal_ai": intensity(f, m),
                     "nonideal_ai": nonideal_intensity(op, accel, wide_inputs=wide)})
    rows.append({"name": "model", "flops": sum(flops(o) for o in ops),
                 "ideal_ai": "", "nonideal_ai": model_nonideal_intensity(cfg, accel)})
    return rows, cols, {}


def cmd_memsweep(args):
    cfg = _load_model(args.model, args.seqlen)
    accel = _load_accel(args.accel)
    sweep_rows, best = memory_split_sweep(cfg, args.total_kb,
                                          pe_width=accel.pe_width,
                                          dram_bw=accel.dram_bw)
    cols = ["scratchpad_kb", "accumulator_kb", "latency_cycles", "feasible", "best"]
    rows = [{"scratchpad_kb": r["split"][0], "accumulator_kb": r["split"][1],
             "latency_cycles": r["latency"], "feasible": r["feasible"],
             "best": r is best} for r in sweep_rows]
    return rows, cols, {}


def cmd_mapsearch(args):
    accel = _load_accel(args.accel)
    try:
        nest = mapspace.NAMED_NESTS[args.op]
    except KeyError:
        raise ConfigError(f"unknown op {args.op!r}; choose from "
                          f"{sorted(mapspace.NAMED_NESTS)}") from None
    lat, en = mapspace.sample_costs(nest, accel, args.samples, args.seed)
    edp = lat * en
    rel = edp / edp.min()
    if args.format == "json":
        stats = mapspace.sample_stats(nest, accel, args.samples, args.seed)
        cols = ["n_samples", "min_edp", "p10", "spread", "frac_within_3x"]
        rows = [{"n_samples": stats.n_samples, "min_edp": stats.min_edp,
                 "p10": stats.p10, "spread": stats.spread,
                 "frac_within_3x": stats.frac_within(3.0)}]
        return rows, cols, {}
    cols = ["sample_idx", "latency", "energy", "edp", "relative_edp"]
    rows = [{"sample_idx": i, "latency": float(lat[i]), "energy": float(en[i]),
             "edp": float(edp[i]), "relative_edp": float(rel[i])}
            for i in range(len(lat))]
    return rows, cols, {}


def cmd_fusion(args):
    accel = _load_accel(args.accel)
    pairs = args.pair or list(PAIR_NAMES)
    acc_kbs = args.acc_kb or [128, 256]
    seq_lens = args.seqlen or [512, 4096]
    cols = ["pair", "accumulator_kb", "seq_len", "fused_latency",
            "nonfused_latency", "producer_penalty", "hidden_cycles",
            "verdict", "feasible", "reason"]
    rows = []
    for name in pairs:
        grid = fusion_sweep(name, accel, acc_kbs, seq_lens)
        for (kb, l), r in sorted(grid.items()):
            rows.append({"pair": name, "accumulator_kb": kb, "seq_len": l,
                         "fused_latency": r.fused_latency,
                         "nonfused_latency": r.nonfused_latency,
                         "producer_penalty": r.producer_penalty,
                         "hidden_cycles": r.hidden_cycles,
                         "verdict": r.verdict.value, "feasible": r.feasible,
                         "reason": r.reason})
    return rows, cols, {}


def cmd_search(args):
    accel = _load_accel(args.accel)
    if args.space:
        with open(args.space, encoding="utf-8") as f:
            space = space_from_json(f.read())
    else:
        space = DEFAULT_SPACE
    front = evolve(space, accel, pop=args.pop, rounds=args.rounds,
                   p=args.mutation, seed=args.seed, cache=CostCache())
    if args.format == "json":
        cols = ["N", "d", "h", "d_FFN", "quality", "edp"]
        rows = [{"N": c.N, "d": c.d, "h": list(c.h), "d_FFN": list(c.d_FFN),
                 "quality": c.quality, "edp": c.edp} for c in front.points]
        extra = {"trace": [{"round": r, "best_edp": e, "front_size": s}
                           for r, e, s in front.trace]}
        return rows, cols, extra
    cols = ["round", "best_edp", "front_size"]
    rows = [{"round": r, "best_edp": e, "front_size": s} for r, e, s in front.trace]
    return rows, cols, {}


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def emit(report: dict, columns: list, fmt: str, out: str | None) -> int:
    """Serialize the report; returns bytes written."""
    if fmt == "json":
        text = json.dumps(report, indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        w.writerows(report["rows"])
        text = buf.getvalue()
    data = text.encode("utf-8")
    if out:
        with open(out, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return len(data)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tfperf",
                                     description="Accelerator performance toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=True, seqlen=True):
        if model:
            p.add_argument("--model", default="bert-base",
                           help="model preset name or JSON config path")
        p.add_argument("--accel", default="gemmini-baseline",
                       help="accelerator preset name or JSON config path")
        if seqlen:
            p.add_argument("--seqlen", type=int, default=512)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("analyze", help="FLOPs/MOPs/intensity per operator")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("latency", help="latency and energy per operator")
    common(p)
    p.set_defaults(func=cmd_latency)

    p = sub.add_parser("nonideal-ai", help="ideal vs modeled arithmetic intensity")
    common(p)
    p.set_defaults(func=cmd_nonideal_ai)

    p = sub.add_parser("memsweep", help="scratchpad/accumulator split sweep")
    common(p)
    p.add_argument("--total-kb", type=int, default=320)
    p.set_defaults(func=cmd_memsweep)

    p = sub.add_parser("mapsearch", help="random mapspace sampling statistics")
    common(p, model=False, seqlen=False)
    p.add_argument("--op", default="bert.mha",
                   help=f"named nest: one of {sorted(mapspace.NAMED_NESTS)}")
    p.add_argument("--samples", type=int, default=1000)
    p.set_defaults(func=cmd_mapsearch)

    p = sub.add_parser("fusion", help="fused vs non-fused scheduling sweep")
    common(p, model=False, seqlen=False)
    p.add_argument("--pair", action="append", choices=PAIR_NAMES)
    p.add_argument("--acc-kb", action="append", type=int)
    p.add_argument("--seqlen", action="append", type=int)
    p.set_defaults(func=cmd_fusion)

    p = sub.add_parser("search", help="evolutionary architecture search")
    common(p, model=False, seqlen=False)
    p.add_argument("--space", default=None, help="search space JSON path")
    p.add_argument("--pop", type=int, default=40)
    p.add_argument("--rounds", type=int, default=40)
    p.add_argument("--mutation", type=float, default=0.2)
    p.set_defaults(func=cmd_search)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rows, columns, extra = args.func(args)
    except (ConfigError, InfeasibleConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    report = {"schema_version": SCHEMA_VERSION,
              "generated_by": "tfperf " + " ".join(argv), **extra, "rows": rows}
    try:
        emit(report, columns, args.format, args.out)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
