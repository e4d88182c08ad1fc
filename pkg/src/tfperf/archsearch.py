"""Evolutionary hardware-aware architecture search with EDP objective.

Searches encoder architectures over layer count, model dim, and per-layer
head count / FFN dim. Each candidate is costed analytically on the
accelerator model (sum of per-operator latency and energy, sequence length
512) through a shape-keyed cost cache; quality uses a parameter-count proxy.
Evolution retains the Pareto front (maximize quality, minimize EDP) and
refills the population by mutating retained members round-robin.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .hwmodel import AcceleratorConfig, CostReport, _wide_flags, greedy_tiles, op_latency
from .workload import ConfigError, Mode, ModelConfig, OperatorSpec, layer_ops_encoder


@dataclass(frozen=True)
class SearchSpace:
    layer_counts: tuple = (3, 4, 5, 6)
    heads_per_layer: tuple = (4, 6, 8, 10, 12)
    model_dims: tuple = tuple(range(384, 769, 96))
    ffn_dims_per_layer: tuple = tuple(range(768, 3073, 128))

    def check(self) -> "SearchSpace":
        for name in ("layer_counts", "heads_per_layer", "model_dims", "ffn_dims_per_layer"):
            vals = getattr(self, name)
            if not vals or min(vals) < 1:
                raise ConfigError(f"search space {name} must be nonempty positive")
        # head dim floor(d/h) must stay >= 1 for every combo
        if min(self.model_dims) < max(self.heads_per_layer):
            raise ConfigError("smallest d must be >= largest h")
        return self


DEFAULT_SPACE = SearchSpace()


def space_from_json(doc: str | dict) -> SearchSpace:
    data = json.loads(doc) if isinstance(doc, str) else dict(doc)
    kw = {}
    for key in ("layer_counts", "heads_per_layer", "model_dims", "ffn_dims_per_layer"):
        if key in data:
            kw[key] = tuple(sorted(int(v) for v in data[key]))
    return SearchSpace(**kw).check()


@dataclass(frozen=True)
class Candidate:
    N: int
    d: int
    h: tuple
    d_FFN: tuple
    quality: float = math.nan
    edp: float = math.nan

    def encode(self) -> tuple:
        return (self.N, self.d) + tuple(self.h) + tuple(self.d_FFN)

    def check(self, space: SearchSpace) -> "Candidate":
        if len(self.h) != self.N or len(self.d_FFN) != self.N:
            raise ConfigError("per-layer lists must have length N")
        if (self.N not in space.layer_counts or self.d not in space.model_dims
                or any(v not in space.heads_per_layer for v in self.h)
                or any(v not in space.ffn_dims_per_layer for v in self.d_FFN)):
            raise ConfigError("candidate outside the search space")
        return self

    @property
    def evaluated(self) -> bool:
        return math.isfinite(self.quality) and math.isfinite(self.edp)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _pick(rng: np.random.Generator, vals: tuple) -> int:
    return int(vals[rng.integers(len(vals))])


def sample_candidate(space: SearchSpace, seed) -> Candidate:
    space.check()
    rng = _rng(seed)
    n = _pick(rng, space.layer_counts)
    d = _pick(rng, space.model_dims)
    h = []
    for _ in range(n):
        v = _pick(rng, space.heads_per_layer)
        while d // v < 1:  # degenerate head dim: resample
            v = _pick(rng, space.heads_per_layer)
        h.append(v)
    dff = tuple(_pick(rng, space.ffn_dims_per_layer) for _ in range(n))
    return Candidate(n, d, tuple(h), dff)


def mutate(c: Candidate, p: float, seed, space: SearchSpace = DEFAULT_SPACE) -> Candidate:
    if not 0.0 <= p <= 1.0:
        raise ConfigError("mutation probability must be in [0, 1]")
    rng = _rng(seed)
    n = _pick(rng, space.layer_counts) if rng.random() < p else c.N
    d = _pick(rng, space.model_dims) if rng.random() < p else c.d
    h, dff = list(c.h[:n]), list(c.d_FFN[:n])
    while len(h) < n:  # N grew: fresh genes for the new layers
        h.append(_pick(rng, space.heads_per_layer))
        dff.append(_pick(rng, space.ffn_dims_per_layer))
    for i in range(n):
        if rng.random() < p:
            h[i] = _pick(rng, space.heads_per_layer)
        if rng.random() < p:
            dff[i] = _pick(rng, space.ffn_dims_per_layer)
    return Candidate(n, d, tuple(h), tuple(dff))


def baseline(space: SearchSpace = DEFAULT_SPACE) -> Candidate:
    n = max(space.layer_counts)
    return Candidate(n, max(space.model_dims),
                     (max(space.heads_per_layer),) * n,
                     (max(space.ffn_dims_per_layer),) * n)


def quality_proxy(c: Candidate) -> float:
    """Parameter count: four d*d attention matrices plus two FFN matrices per layer."""
    return float(sum(4 * c.d * c.d + 2 * c.d * f for f in c.d_FFN))


def candidate_ops(c: Candidate, seq_len: int = 512) -> list[OperatorSpec]:
    # base num_heads=1 always divides d; real head counts enter per layer
    cfg = ModelConfig(name="nas", num_layers=c.N, model_dim=c.d, num_heads=1,
                      ffn_dim=c.d_FFN[0], seq_len=seq_len, mode=Mode.Encoder).check()
    ops: list[OperatorSpec] = []
    for i in range(c.N):
        ops.extend(layer_ops_encoder(cfg, i, heads=c.h[i], ffn_dim=c.d_FFN[i]))
    return ops


def _accel_key(accel: AcceleratorConfig) -> tuple:
    e = accel.energy
    return (accel.pe_width, accel.scratchpad_bytes, accel.accumulator_bytes,
            accel.dram_bw, accel.sfu_vector_latency, accel.dataflow,
            accel.idealized_matvec, e.mac_energy, e.scratchpad_access,
            e.accumulator_access, e.dram_access)


def _shape_key(op: OperatorSpec, wide_inputs: bool) -> tuple:
    return (op.op_class, type(op.kind).__name__, dataclasses.astuple(op.kind),
            op.repeat, op.in_precisions, op.out_precision, op.pre_nonlinear,
            wide_inputs)


class CostCache:
    """Shape-keyed lookup table over per-operator cost reports (transparent)."""

    def __init__(self):
        self._table: dict = {}
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._table)

    def cost(self, op: OperatorSpec, accel: AcceleratorConfig,
             wide_inputs: bool = False) -> CostReport:
        key = (_shape_key(op, wide_inputs), _accel_key(accel))
        hit = self._table.get(key)
        if hit is not None:
            self.hits += 1
            return hit
        self.misses += 1
        rep = op_latency(op, accel, wide_inputs=wide_inputs)
        self._table[key] = rep
        return rep


def candidate_edp(c: Candidate, accel: AcceleratorConfig,
                  cache: CostCache | None = None, seq_len: int = 512) -> float:
    """Total latency x total energy over the candidate's encoder operators."""
    cache = cache if cache is not None else CostCache()
    ops = candidate_ops(c, seq_len)
    wide = _wide_flags(ops)
    lat = 0.0
    energy = 0.0
    for op, w in zip(ops, wide):
        rep = cache.cost(op, accel, wide_inputs=w)
        lat += rep.latency
        energy += rep.energy
    return lat * energy


def evaluate(c: Candidate, accel: AcceleratorConfig, cache: CostCache | None = None,
             quality: Callable[[Candidate], float] = quality_proxy,
             seq_len: int = 512) -> Candidate:
    return replace(c, quality=quality(c),
                   edp=candidate_edp(c, accel, cache, seq_len))


def _dominates(a: Candidate, b: Candidate) -> bool:
    return (a.quality >= b.quality and a.edp <= b.edp
            and (a.quality > b.quality or a.edp < b.edp))


@dataclass(frozen=True)
class ParetoFront:
    points: tuple  # Candidates sorted by increasing edp
    trace: tuple = ()  # (round, best_edp, front_size) rows
    discarded: tuple = ()  # (candidate encode, reason) rows

    def check(self) -> "ParetoFront":
        for i, p in enumerate(self.points):
            if not p.evaluated:
                raise ConfigError("front contains an unevaluated candidate")
            if i and not self.points[i - 1].edp < p.edp:
                raise ConfigError("front must be strictly sorted by edp")
            if any(_dominates(q, p) for q in self.points if q is not p):
                raise ConfigError("front contains a dominated point")
        return self

    @property
    def min_edp(self) -> float:
        return self.points[0].edp if self.points else math.inf


def pareto(points: list[Candidate]) -> ParetoFront:
    # one representative per (quality, edp) pair, canonical-encoding tie-break
    best: dict = {}
    for p in points:
        key = (p.quality, p.edp)
        if key not in best or p.encode() < best[key].encode():
            best[key] = p
    pts = list(best.values())
    front = [p for p in pts if not any(_dominates(q, p) for q in pts)]
    front.sort(key=lambda p: (p.edp, -p.quality, p.encode()))
    return ParetoFront(tuple(front)).check()


def evolve(space: SearchSpace = DEFAULT_SPACE,
           accel: AcceleratorConfig | None = None,
           pop: int = 40, rounds: int = 40, p: float = 0.2, seed=0,
           cache: CostCache | None = None,
           quality: Callable[[Candidate], float] = quality_proxy,
           seq_len: int = 512) -> ParetoFront:
    """Pareto-retention evolution; deterministic per seed."""
    if pop < 2 or rounds < 1:
        raise ConfigError("need pop >= 2 and rounds >= 1")
    if accel is None:
        from .hwmodel import accel_preset
        accel = accel_preset("gemmini-baseline")
    space.check()
    rng = _rng(seed)
    cache = cache if cache is not None else CostCache()
    population = [sample_candidate(space, rng) for _ in range(pop)]
    trace: list = []
    discarded: list = []
    front = ParetoFront(())
    for rnd in range(1, rounds + 1):
        scored = []
        for c in population:
            if c.evaluated:
                scored.append(c)
                continue
            try:
                scored.append(evaluate(c, accel, cache, quality, seq_len))
            except (ConfigError, ValueError) as exc:
                discarded.append((c.encode(), str(exc)))
        front = pareto(list(front.points) + scored)
        trace.append((rnd, front.min_edp, len(front.points)))
        population = []
        i = 0
        while len(population) < pop - len(front.points):
            population.append(mutate(front.points[i % len(front.points)], p, rng, space))
            i += 1
    return ParetoFront(front.points, tuple(trace), tuple(discarded)).check()


def rescore(front: ParetoFront, accel: AcceleratorConfig,
            seq_len: int = 512) -> ParetoFront:
    """High-fidelity pass: re-cost retained candidates with greedy max tiles."""
    out = []
    for c in front.points:
        ops = candidate_ops(c, seq_len)
        wide = _wide_flags(ops)
        lat = 0.0
        energy = 0.0
        for op, w in zip(ops, wide):
            plan = None
            if type(op.kind).__name__ in ("Matmul", "Conv"):
                plan = greedy_tiles(op, accel)
            rep = op_latency(op, accel, plan=plan, wide_inputs=w)
            lat += rep.latency
            energy += rep.energy
        out.append(replace(c, edp=lat * energy))
    return pareto(out)
