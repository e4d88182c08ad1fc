"""Analytical latency/energy model of a W x W weight-stationary accelerator.

Execution model:
- matmuls/convs run as square tiles (largest multiple of W fitting the
  double-buffered capacity halves), walked m-outer / n-middle / k-inner;
- each tile costs max(compute, memory) cycles: compute is
  t_k * ceil(t_m/W) * ceil(t_n/W) plus a W-cycle pipeline fill, memory is the
  tile's DRAM bytes over the DRAM bandwidth (double buffering overlaps them);
- an input operand whose whole matrix fits its scratchpad half is loaded
  only on the first pass; otherwise it is re-fetched on every cross pass;
- outputs accumulate in the (double-buffered) accumulator and drain once;
  operators feeding Softmax/LayerNorm drain at 4-byte precision;
- matrix-vector series occupy one PE column per step (W MACs/cycle) unless
  `idealized_matvec` is set; nonlinear vector work runs on the SFU at W
  elements per cycle per pass, 3 passes for standalone Softmax/LayerNorm;
- the L2 is unbounded staging: it adds no latency term, and the DRAM figure
  is the DRAM-to-L2 traffic.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .workload import (
    Conv,
    Elementwise,
    Matmul,
    MatvecSeries,
    ModelConfig,
    OperatorClass,
    OperatorSpec,
    _a2a_static,
    category_of,
    flops,
    model_ops,
)


class Dataflow(Enum):
    WeightStationary = "weight_stationary"


class InfeasibleConfigError(ValueError):
    """Capacities too small to hold even a single minimal tile."""


@dataclass(frozen=True)
class EnergyTable:
    mac_energy: float = 1.0
    scratchpad_access: float = 6.0
    accumulator_access: float = 12.0
    dram_access: float = 200.0

    def check(self) -> "EnergyTable":
        if not (self.dram_access > self.scratchpad_access > 0):
            raise InfeasibleConfigError("energy table must satisfy dram > scratchpad > 0")
        return self


@dataclass(frozen=True)
class AcceleratorConfig:
    pe_width: int = 16
    scratchpad_bytes: int = 256 * 1024
    accumulator_bytes: int = 64 * 1024
    dram_bw: float = 3.0
    sfu_vector_latency: float = 1.0
    energy: EnergyTable = field(default_factory=EnergyTable)
    dataflow: Dataflow = Dataflow.WeightStationary
    idealized_matvec: bool = False

    def check(self) -> "AcceleratorConfig":
        if self.pe_width < 1:
            raise InfeasibleConfigError("pe_width must be >= 1")
        if min(self.scratchpad_bytes, self.accumulator_bytes) <= 0 or self.dram_bw <= 0:
            raise InfeasibleConfigError("capacities and dram_bw must be positive")
        self.energy.check()
        return self


_ACCEL_PRESETS = {
    "gemmini-baseline": dict(pe_width=16, scratchpad_kb=256, accumulator_kb=64),
    "gemmini-tuned": dict(pe_width=16, scratchpad_kb=64, accumulator_kb=256),
}


def accel_preset(name: str) -> AcceleratorConfig:
    try:
        p = _ACCEL_PRESETS[name]
    except KeyError:
        raise InfeasibleConfigError(
            f"unknown accelerator preset {name!r}; choose from {sorted(_ACCEL_PRESETS)}") from None
    return AcceleratorConfig(pe_width=p["pe_width"],
                             scratchpad_bytes=p["scratchpad_kb"] * 1024,
                             accumulator_bytes=p["accumulator_kb"] * 1024).check()


def accel_from_json(doc: str | dict) -> AcceleratorConfig:
    data = json.loads(doc) if isinstance(doc, str) else dict(doc)
    e = data.get("energy", {})
    table = EnergyTable(
        mac_energy=float(e.get("mac", 1.0)),
        scratchpad_access=float(e.get("spad", 6.0)),
        accumulator_access=float(e.get("acc", 12.0)),
        dram_access=float(e.get("dram", 200.0)),
    )
    try:
        cfg = AcceleratorConfig(
            pe_width=int(data.get("pe_width", 16)),
            scratchpad_bytes=int(data.get("scratchpad_kb", 256) * 1024),
            accumulator_bytes=int(data.get("accumulator_kb", 64) * 1024),
            dram_bw=float(data.get("dram_bytes_per_cycle", 3.0)),
            sfu_vector_latency=float(data.get("sfu_cycles_per_vector", 1.0)),
            energy=table,
        )
    except (ValueError, TypeError) as exc:
        raise InfeasibleConfigError(f"bad accelerator config: {exc}") from exc
    return cfg.check()


@dataclass(frozen=True)
class TilingPlan:
    tile_m: int
    tile_k: int
    tile_n: int
    wide_output: bool = False


@dataclass(frozen=True)
class CostReport:
    latency: float
    energy: float
    traffic: dict
    compute_bound: bool

    @property
    def edp(self) -> float:
        return self.latency * self.energy


# ---------------------------------------------------------------------------
# Tiling
# ---------------------------------------------------------------------------

def matmul_dims(op: OperatorSpec) -> tuple[int, int, int]:
    """(M, K, N) of a matmul, with convs lowered to implicit matmul."""
    k = op.kind
    if isinstance(k, Matmul):
        return k.M, k.K, k.N
    if isinstance(k, Conv):
        return k.out_h * k.out_w, k.kernel * k.kernel * k.in_ch, k.out_ch
    raise TypeError(f"need a Matmul or Conv, got {type(k).__name__}")


def _pad(x: int, w: int) -> int:
    return ((x + w - 1) // w) * w


def _in_bytes(op: OperatorSpec) -> tuple[int, int]:
    p = op.in_precisions
    return (p[0], p[1]) if len(p) > 1 else (p[0], p[0])


def _out_bytes(op: OperatorSpec, wide_output: bool) -> int:
    return 4 if wide_output else op.out_precision


def _tile_fits(tm: int, tk: int, tn: int, accel: AcceleratorConfig,
               in1_b: int, in2_b: int, out_b: int) -> bool:
    half = accel.scratchpad_bytes // 2
    return (tm * tk * in1_b <= half and tk * tn * in2_b <= half
            and tm * tn * out_b <= accel.accumulator_bytes // 2)


def square_tiles(op: OperatorSpec, accel: AcceleratorConfig,
                 wide_output: bool | None = None) -> TilingPlan:
    if wide_output is None:
        wide_output = op.pre_nonlinear
    M, K, N = matmul_dims(op)
    W = accel.pe_width
    in1_b, in2_b = _in_bytes(op)
    out_b = _out_bytes(op, wide_output)

    def clamped(t: int) -> tuple[int, int, int]:
        return min(t, _pad(M, W)), min(t, _pad(K, W)), min(t, _pad(N, W))

    if not _tile_fits(*clamped(W), accel, in1_b, in2_b, out_b):
        raise InfeasibleConfigError(
            f"no {W}x{W} tile fits scratchpad/accumulator for {op.name}")
    t = W
    while True:
        cand = clamped(t + W)
        if cand == clamped(t) or not _tile_fits(*cand, accel, in1_b, in2_b, out_b):
            break
        t += W
    tm, tk, tn = clamped(t)
    return TilingPlan(tm, tk, tn, wide_output=wide_output)


def greedy_tiles(op: OperatorSpec, accel: AcceleratorConfig,
                 wide_output: bool | None = None) -> TilingPlan:
    """Gemmini-style heuristic: square tiles, then greedily extend K, M, N."""
    plan = square_tiles(op, accel, wide_output)
    M, K, N = matmul_dims(op)
    W = accel.pe_width
    in1_b, in2_b = _in_bytes(op)
    out_b = _out_bytes(op, plan.wide_output)
    tm, tk, tn = plan.tile_m, plan.tile_k, plan.tile_n
    caps = (_pad(M, W), _pad(K, W), _pad(N, W))
    for dim in (1, 0, 2):  # K first, then M, then N
        while True:
            nxt = [tm, tk, tn]
            nxt[dim] = min(nxt[dim] + W, caps[dim])
            if tuple(nxt) == (tm, tk, tn) or not _tile_fits(*nxt, accel, in1_b, in2_b, out_b):
                break
            tm, tk, tn = nxt
    return TilingPlan(tm, tk, tn, wide_output=plan.wide_output)


# ---------------------------------------------------------------------------
# Matmul / conv tile walk
# ---------------------------------------------------------------------------

def _sizes(total: int, tile: int) -> np.ndarray:
    n = math.ceil(total / tile)
    out = np.full(n, tile, dtype=np.int64)
    if total % tile:
        out[-1] = total % tile
    return out


def _tiled_cost(op: OperatorSpec, plan: TilingPlan, accel: AcceleratorConfig):
    """Vectorized m-outer/n-middle/k-inner tile walk.

    Returns (latency, compute_cycles, traffic dict, macs) for one repeat.
    """
    M, K, N = matmul_dims(op)
    W = accel.pe_width
    in1_b, in2_b = _in_bytes(op)
    out_b = _out_bytes(op, plan.wide_output)
    half = accel.scratchpad_bytes // 2
    in1_resident = M * K * in1_b <= half
    in2_resident = K * N * in2_b <= half

    ms = _sizes(M, plan.tile_m)
    ks = _sizes(K, plan.tile_k)
    ns = _sizes(N, plan.tile_n)
    # tile grids: axis order (m, n, k)
    tm = ms[:, None, None]
    tn = ns[None, :, None]
    tk = ks[None, None, :]

    in1_bytes = (tm * tk * in1_b).astype(np.float64)
    if in1_resident:  # loaded only while the first n block is computed
        in1_bytes = in1_bytes * (np.arange(len(ns))[None, :, None] == 0)
    in2_bytes = (tk * tn * in2_b).astype(np.float64)
    if in2_resident:  # loaded only while the first m block is computed
        in2_bytes = in2_bytes * (np.arange(len(ms))[:, None, None] == 0)
    out_bytes = np.zeros((len(ms), len(ns), len(ks)))
    out_bytes[:, :, -1] = (ms[:, None] * ns[None, :]) * out_b

    bytes_per_tile = in1_bytes + in2_bytes + out_bytes
    compute = tk * np.ceil(tm / W) * np.ceil(tn / W) + W
    latency = float(np.maximum(compute, bytes_per_tile / accel.dram_bw).sum())
    compute_cycles = float(np.broadcast_to(compute, bytes_per_tile.shape).sum())
    reps = op.kind.repetitions if isinstance(op.kind, Conv) else 1
    macs = float(M) * K * N * reps
    dram = float(bytes_per_tile.sum()) * reps
    traffic = {
        "dram": dram,
        # W-wide array reuse: each streamed operand element feeds W MACs
        "spad": dram + macs * (in1_b + in2_b) / W,
        "acc": macs * 4.0 / W + float(out_bytes.sum()) * reps,
    }
    return latency * reps, compute_cycles * reps, traffic, macs


# ---------------------------------------------------------------------------
# Matvec series and elementwise
# ---------------------------------------------------------------------------

def _matvec_cost(op: OperatorSpec, accel: AcceleratorConfig):
    k: MatvecSeries = op.kind
    W = accel.pe_width
    in1_b, in2_b = _in_bytes(op)
    out_b = op.out_precision
    it = k.iterations
    if op.op_class is OperatorClass.ActToAct:
        # KV-cache series: step i reads i cached vectors and writes one new one
        static = _a2a_static(k)
        steps = np.arange(1, it + 1, dtype=np.float64)
        by = static * steps * in1_b + static * in2_b
        if k.rows == it:  # query*key style: i scores out at step i
            by = by + steps * out_b
        else:  # score*value style: fixed-size context vector out
            by = by + static * out_b
        comp = np.ceil(static * steps / W) + W
        macs = float(static * steps.sum())
    else:
        # weights reloaded every step; matrix operand carries in2 precision
        steps = np.full(it, 1.0)
        by = np.full(it, float(k.rows * k.cols * in2_b + k.cols * in1_b + k.rows * out_b))
        comp = np.full(it, math.ceil(k.rows * k.cols / W) + W)
        macs = float(k.rows * k.cols) * it
    if accel.idealized_matvec:
        comp = np.ones_like(comp)
    latency = float(np.maximum(comp, by / accel.dram_bw).sum())
    dram = float(by.sum())
    traffic = {"dram": dram,
               "spad": dram + macs * (in1_b + in2_b) / W,
               "acc": macs * 4.0 / W}
    return latency, float(comp.sum()), traffic, macs


_STANDALONE_PASSES = 3  # load/reduce, transform, write passes for softmax & layernorm


def _elementwise_cost(op: OperatorSpec, accel: AcceleratorConfig, wide_inputs: bool):
    k: Elementwise = op.kind
    W = accel.pe_width
    if wide_inputs:
        passes = _STANDALONE_PASSES
        by = float(k.elements) * (passes * 4 + op.out_precision)
    else:
        passes = k.passes
        by = float(k.elements) * (passes * op.in_precisions[0] + op.out_precision)
    comp = passes * math.ceil(k.elements / W) * accel.sfu_vector_latency
    latency = max(comp, by / accel.dram_bw)
    traffic = {"dram": by, "spad": by, "acc": 0.0}
    return latency, comp, traffic, 0.0


# ---------------------------------------------------------------------------
# Public per-op costs
# ---------------------------------------------------------------------------

def op_latency(op: OperatorSpec, accel: AcceleratorConfig,
               plan: TilingPlan | None = None,
               wide_inputs: bool = False) -> CostReport:
    """Latency/energy/traffic of one operator (all `repeat` instances)."""
    if isinstance(op.kind, (Matmul, Conv)):
        if plan is None:
            plan = square_tiles(op, accel)
        lat, comp, traffic, macs = _tiled_cost(op, plan, accel)
    elif isinstance(op.kind, MatvecSeries):
        lat, comp, traffic, macs = _matvec_cost(op, accel)
    elif isinstance(op.kind, Elementwise):
        lat, comp, traffic, macs = _elementwise_cost(op, accel, wide_inputs)
    else:
        raise TypeError(f"unknown kind {type(op.kind).__name__}")
    r = op.repeat
    lat, comp, macs = lat * r, comp * r, macs * r
    traffic = {k: v * r for k, v in traffic.items()}
    e = accel.energy
    energy = (macs * e.mac_energy
              + traffic["spad"] * e.scratchpad_access
              + traffic["acc"] * e.accumulator_access
              + traffic["dram"] * e.dram_access)
    return CostReport(latency=lat, energy=energy, traffic=traffic,
                      compute_bound=comp >= traffic["dram"] / accel.dram_bw)


def nonideal_intensity(op: OperatorSpec, accel: AcceleratorConfig,
                       plan: TilingPlan | None = None,
                       wide_inputs: bool = False) -> float:
    """FLOPs over modeled DRAM traffic (tiling reloads, wide drains)."""
    rep = op_latency(op, accel, plan=plan, wide_inputs=wide_inputs)
    f = flops(op)
    if rep.traffic["dram"] <= 0:
        raise ZeroDivisionError(f"no DRAM traffic for {op.name}")
    return f / rep.traffic["dram"]


# ---------------------------------------------------------------------------
# Whole-model views
# ---------------------------------------------------------------------------

def _wide_flags(ops: Sequence[OperatorSpec]) -> list[bool]:
    """Elementwise op i reads 4-byte inputs when fed by a pre-nonlinear op."""
    flags = []
    prev_wide = False
    for op in ops:
        flags.append(isinstance(op.kind, Elementwise) and prev_wide)
        prev_wide = op.pre_nonlinear
    return flags


def model_costs(cfg: ModelConfig, accel: AcceleratorConfig):
    """(op, CostReport) per operator, full model, non-fused execution."""
    ops = model_ops(cfg)
    out = []
    for op, wide in zip(ops, _wide_flags(ops)):
        out.append((op, op_latency(op, accel, wide_inputs=wide)))
    return out


def latency_breakdown(cfg: ModelConfig, accel: AcceleratorConfig) -> dict:
    """Cycles per workload category plus 'total'."""
    by_cat: dict[str, float] = {}
    total = 0.0
    cnn = cfg.name == "resnet50"
    for op, rep in model_costs(cfg, accel):
        cat = category_of(op, cnn=cnn)
        by_cat[cat] = by_cat.get(cat, 0.0) + rep.latency
        total += rep.latency
    by_cat["total"] = total
    return by_cat


def model_nonideal_intensity(cfg: ModelConfig, accel: AcceleratorConfig) -> float:
    """Whole-model FLOPs over whole-model DRAM traffic."""
    costs = model_costs(cfg, accel)
    f = sum(flops(op) for op, _ in costs)
    d = sum(rep.traffic["dram"] for _, rep in costs)
    return f / d


def nonlinear_latency_share(cfg: ModelConfig, accel: AcceleratorConfig) -> float:
    """Fraction of total cycles spent in nonlinear/pooling vector work."""
    costs = model_costs(cfg, accel)
    total = sum(rep.latency for _, rep in costs)
    nl = sum(rep.latency for op, rep in costs
             if op.op_class in (OperatorClass.Nonlinear, OperatorClass.Pooling))
    return nl / total


def matmul_latency(cfg: ModelConfig, accel: AcceleratorConfig) -> float:
    """Total cycles spent in matmul-class operators (projections + act-to-act)."""
    return sum(rep.latency for op, rep in model_costs(cfg, accel)
               if isinstance(op.kind, (Matmul, Conv, MatvecSeries)))


def memory_split_sweep(cfg: ModelConfig, total_kb: int,
                       splits: Sequence[tuple[int, int]] | None = None,
                       pe_width: int = 16, dram_bw: float = 3.0):
    """Matmul latency for each (scratchpad_kb, accumulator_kb) split.

    Returns (rows, best) where rows are dicts with keys split/latency/feasible
    and best is the feasible row with the lowest latency.
    """
    if splits is None:
        splits = [(k, total_kb - k) for k in range(16, total_kb, 16)]
    rows = []
    for spad_kb, acc_kb in splits:
        if spad_kb + acc_kb != total_kb:
            raise InfeasibleConfigError(
                f"split {spad_kb}+{acc_kb} != total {total_kb} kB")
        accel = AcceleratorConfig(pe_width=pe_width,
                                  scratchpad_bytes=spad_kb * 1024,
                                  accumulator_bytes=acc_kb * 1024,
                                  dram_bw=dram_bw).check()
        try:
            lat = matmul_latency(cfg, accel)
            rows.append({"split": (spad_kb, acc_kb), "latency": lat, "feasible": True})
        except InfeasibleConfigError:
            rows.append({"split": (spad_kb, acc_kb), "latency": math.inf, "feasible": False})
    feasible = [r for r in rows if r["feasible"]]
    if not feasible:
        raise InfeasibleConfigError(f"no feasible split of {total_kb} kB")
    best = min(feasible, key=lambda r: r["latency"])
    return rows, best
