"""Mapping spaces for matmul and convolution loop nests.

A mapping assigns, per loop dimension: a spatial factor (PE rows for the
first spatial dim, PE columns for the second), a local tile size, and a DRAM
loop position. Tile sizes are drawn from divisors of the padded extent that
are multiples of the spatial factor, so every factorization is exact.

Costing follows the usual analytical-mapper traffic rules: an operand is
re-fetched each time an irrelevant outer loop above an iterating relevant
loop advances; partial outputs spill at 4-byte precision whenever a
reduction loop iterates above an iterating output loop.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .hwmodel import AcceleratorConfig, CostReport, InfeasibleConfigError
from .workload import Conv, Matmul, OperatorSpec

MATMUL_DIMS = ("m", "k", "n")
CONV_DIMS = ("oc", "ic", "kh", "kw", "oh", "ow")


class MapspaceTooLargeError(ValueError):
    """Exhaustive enumeration would exceed the size guard."""


@dataclass(frozen=True)
class LoopNest:
    dims: tuple[tuple[str, int], ...]
    stride: int = 1  # conv nests only

    def __post_init__(self):
        names = [n for n, _ in self.dims]
        if len(set(names)) != len(names):
            raise ValueError("duplicate dim names")
        if any(e < 1 for _, e in self.dims):
            raise ValueError("extents must be >= 1")
        if tuple(names) not in (MATMUL_DIMS, CONV_DIMS):
            raise ValueError(f"dims must be {MATMUL_DIMS} or {CONV_DIMS}, got {names}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.dims)

    @property
    def extents(self) -> tuple[int, ...]:
        return tuple(e for _, e in self.dims)

    @property
    def is_conv(self) -> bool:
        return self.names == CONV_DIMS

    @property
    def spatial_dims(self) -> tuple[str, str]:
        # PE rows get m / out_ch, PE columns get n / in_ch
        return ("m", "n") if not self.is_conv else ("oc", "ic")


def matmul_nest(M: int, K: int, N: int) -> LoopNest:
    return LoopNest((("m", M), ("k", K), ("n", N)))


def conv_nest(conv: Conv) -> LoopNest:
    return LoopNest((("oc", conv.out_ch), ("ic", conv.in_ch),
                     ("kh", conv.kernel), ("kw", conv.kernel),
                     ("oh", conv.out_h), ("ow", conv.out_w)), stride=conv.stride)


def nest_of(op: OperatorSpec) -> LoopNest:
    if isinstance(op.kind, Matmul):
        return matmul_nest(op.kind.M, op.kind.K, op.kind.N)
    if isinstance(op.kind, Conv):
        return conv_nest(op.kind)
    raise TypeError(f"no loop nest for {type(op.kind).__name__}")


NAMED_NESTS = {
    "bert.mha": matmul_nest(768, 768, 512),
    "bert.qk": matmul_nest(512, 64, 512),
    "resnet.c3": conv_nest(Conv(3, 512, 512, 7, 7)),
}


@dataclass(frozen=True)
class Mapping:
    nest: LoopNest
    spatial: tuple[int, ...]    # factor per dim; 1 on non-spatial dims
    tiles: tuple[int, ...]      # local tile size per dim (multiple of spatial)
    dram_perm: tuple[str, ...]  # outermost .. innermost
    local_perm: tuple[str, ...]

    def padded_extents(self) -> tuple[int, ...]:
        return tuple(_pad(e, s) for e, s in zip(self.nest.extents, self.spatial))

    def dram_factors(self) -> tuple[int, ...]:
        return tuple(p // t for p, t in zip(self.padded_extents(), self.tiles))

    def positions(self) -> tuple[int, ...]:
        # position of each nest dim in the DRAM loop order (0 = outermost)
        where = {d: i for i, d in enumerate(self.dram_perm)}
        return tuple(where[d] for d in self.nest.names)

    def encode(self) -> tuple:
        return (self.spatial, self.tiles, self.dram_perm, self.local_perm)


def _pad(x: int, w: int) -> int:
    return ((x + w - 1) // w) * w


@lru_cache(maxsize=None)
def _divisors(x: int) -> tuple[int, ...]:
    return tuple(d for d in range(1, x + 1) if x % d == 0)


@lru_cache(maxsize=None)
def _tile_choices(extent: int, s: int) -> tuple[int, ...]:
    p = _pad(extent, s)
    return tuple(d for d in _divisors(p) if d % s == 0)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _footprints(m: Mapping, act_b: int = 1, w_b: int = 1, out_b: int = 1):
    """(scratchpad-operand-1, scratchpad-operand-2, accumulator) tile bytes."""
    t = dict(zip(m.nest.names, m.tiles))
    if m.nest.is_conv:
        st = m.nest.stride
        ih = (t["oh"] - 1) * st + t["kh"]
        iw = (t["ow"] - 1) * st + t["kw"]
        return (t["oc"] * t["ic"] * t["kh"] * t["kw"] * w_b,
                t["ic"] * ih * iw * act_b,
                t["oc"] * t["oh"] * t["ow"] * out_b)
    return (t["m"] * t["k"] * act_b, t["k"] * t["n"] * w_b,
            t["m"] * t["n"] * out_b)


def validate(m: Mapping, nest: LoopNest, accel: AcceleratorConfig,
             precisions: tuple[int, int, int] = (1, 1, 1)) -> list[str]:
    """Empty list when valid; otherwise one message per violated constraint."""
    out = []
    if m.nest != nest:
        out.append("mapping built for a different nest")
        return out
    W = accel.pe_width
    sdims = nest.spatial_dims
    for name, ext, s, t in zip(nest.names, nest.extents, m.spatial, m.tiles):
        if name in sdims:
            if s < 1 or W % s != 0:
                out.append(f"spatial factor {s} on {name} not a divisor of W={W}")
        elif s != 1:
            out.append(f"spatial factor on non-spatial dim {name}")
        p = _pad(ext, s)
        if t % max(s, 1) != 0:
            out.append(f"tile {t} on {name} not a multiple of spatial {s}")
        if t < 1 or p % t != 0:
            out.append(f"tile {t} on {name} does not divide padded extent {p}")
        covered = p  # dram_factor * tile == padded extent by construction
        if covered < ext:
            out.append(f"under-covered dim {name}: {covered} < {ext}")
        if covered >= 2 * p:
            out.append(f"over-padded dim {name}")
    for perm, label in ((m.dram_perm, "dram"), (m.local_perm, "local")):
        if sorted(perm) != sorted(nest.names):
            out.append(f"{label} permutation is not a bijection over dims")
    act_b, w_b, out_b = precisions
    f1, f2, facc = _footprints(m, act_b, w_b, out_b)
    half = accel.scratchpad_bytes // 2
    if f1 > half:
        out.append(f"operand-1 tile {f1} B exceeds scratchpad half {half} B")
    if f2 > half:
        out.append(f"operand-2 tile {f2} B exceeds scratchpad half {half} B")
    if facc > accel.accumulator_bytes // 2:
        out.append(f"output tile {facc} B exceeds accumulator half "
                   f"{accel.accumulator_bytes // 2} B")
    return out


# ---------------------------------------------------------------------------
# Batch sampling (array-of-mappings form shared with the kernels)
# ---------------------------------------------------------------------------

def _perm_table(ndims: int) -> np.ndarray:
    """All permutations as a (n!, ndims) position table: row p, column d =
    position of dim d in permutation p."""
    perms = list(itertools.permutations(range(ndims)))
    table = np.empty((len(perms), ndims), dtype=np.int64)
    for i, perm in enumerate(perms):
        for pos, d in enumerate(perm):
            table[i, d] = pos
    return table


class _Batch:
    """Column arrays for n sampled mappings of one nest."""

    def __init__(self, nest: LoopNest, n: int):
        self.nest = nest
        d = len(nest.names)
        self.spatial = np.ones((d, n), dtype=np.int64)
        self.tiles = np.ones((d, n), dtype=np.int64)
        self.perm_idx = np.zeros(n, dtype=np.int64)

    def padded(self) -> np.ndarray:
        ext = np.array(self.nest.extents, dtype=np.int64)[:, None]
        s = self.spatial
        return ((ext + s - 1) // s) * s

    def positions(self) -> np.ndarray:
        return _perm_table(len(self.nest.names))[self.perm_idx].T.copy()


def _sample_batch(nest: LoopNest, accel: AcceleratorConfig, n: int,
                  rng: np.random.Generator,
                  precisions: tuple[int, int, int]) -> _Batch:
    """n candidate mappings drawn uniformly (not yet validity-filtered)."""
    W = accel.pe_width
    batch = _Batch(nest, n)
    sdivs = np.array(_divisors(W), dtype=np.int64)
    sdims = nest.spatial_dims
    for d, (name, ext) in enumerate(nest.dims):
        if name in sdims:
            batch.spatial[d] = sdivs[rng.integers(0, len(sdivs), size=n)]
        # tile choice sets depend on the sampled spatial factor
        svals = np.unique(batch.spatial[d])
        for s in svals:
            mask = batch.spatial[d] == s
            choices = np.array(_tile_choices(ext, int(s)), dtype=np.int64)
            batch.tiles[d, mask] = choices[rng.integers(0, len(choices), size=int(mask.sum()))]
    nperm = math.factorial(len(nest.names))
    batch.perm_idx = rng.integers(0, nperm, size=n)
    return batch


def _valid_mask(batch: _Batch, accel: AcceleratorConfig,
                precisions: tuple[int, int, int]) -> np.ndarray:
    act_b, w_b, out_b = precisions
    t = batch.tiles
    half = accel.scratchpad_bytes // 2
    acc_half = accel.accumulator_bytes // 2
    if batch.nest.is_conv:
        st = batch.nest.stride
        ih = (t[4] - 1) * st + t[2]
        iw = (t[5] - 1) * st + t[3]
        f1 = t[0] * t[1] * t[2] * t[3] * w_b
        f2 = t[1] * ih * iw * act_b
        facc = t[0] * t[4] * t[5] * out_b
    else:
        f1 = t[0] * t[1] * act_b
        f2 = t[1] * t[2] * w_b
        facc = t[0] * t[2] * out_b
    return (f1 <= half) & (f2 <= half) & (facc <= acc_half)


def _eval_batch(batch: _Batch, accel: AcceleratorConfig,
                precisions: tuple[int, int, int]):
    act_b, w_b, out_b = precisions
    e = accel.energy
    P = batch.padded()
    pos = batch.positions()
    if batch.nest.is_conv:
        return _kernels.conv_eval(
            P, batch.spatial[0], batch.spatial[1], batch.tiles, pos,
            batch.nest.stride, act_b, w_b, out_b, accel.pe_width, accel.dram_bw,
            e.mac_energy, e.scratchpad_access, e.accumulator_access, e.dram_access)
    return _kernels.matmul_eval(
        P[0], P[1], P[2], batch.spatial[0], batch.spatial[2],
        batch.tiles[0], batch.tiles[1], batch.tiles[2],
        pos[0], pos[1], pos[2],
        act_b, w_b, out_b, accel.pe_width, accel.dram_bw,
        e.mac_energy, e.scratchpad_access, e.accumulator_access, e.dram_access)


def _mapping_from_batch(batch: _Batch, i: int, rng: np.random.Generator | None = None,
                        local_perm: tuple[str, ...] | None = None) -> Mapping:
    names = batch.nest.names
    perms = list(itertools.permutations(names))
    if local_perm is None:
        local_perm = perms[int(rng.integers(0, len(perms)))] if rng is not None else names
    return Mapping(
        nest=batch.nest,
        spatial=tuple(int(x) for x in batch.spatial[:, i]),
        tiles=tuple(int(x) for x in batch.tiles[:, i]),
        dram_perm=perms[int(batch.perm_idx[i])],
        local_perm=tuple(local_perm),
    )


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

_MAX_REJECTION_ROUNDS = 64


def random_mapping(nest: LoopNest, accel: AcceleratorConfig, seed: int,
                   precisions: tuple[int, int, int] = (1, 1, 1)) -> Mapping:
    """One uniformly sampled valid mapping; deterministic per seed."""
    rng = np.random.default_rng(seed)
    for _ in range(_MAX_REJECTION_ROUNDS):
        batch = _sample_batch(nest, accel, 64, rng, precisions)
        ok = _valid_mask(batch, accel, precisions)
        idx = np.flatnonzero(ok)
        if len(idx):
            return _mapping_from_batch(batch, int(idx[0]), rng=rng)
    raise InfeasibleConfigError(
        f"no valid mapping found for {nest.names} under the given capacities")


def evaluate(m: Mapping, nest: LoopNest, accel: AcceleratorConfig,
             precisions: tuple[int, int, int] = (1, 1, 1)) -> CostReport:
    """Cost one mapping (rejects invalid ones)."""
    bad = validate(m, nest, accel, precisions)
    if bad:
        raise InfeasibleConfigError("invalid mapping: " + "; ".join(bad))
    batch = _Batch(nest, 1)
    batch.spatial[:, 0] = m.spatial
    batch.tiles[:, 0] = m.tiles
    perms = list(itertools.permutations(nest.names))
    batch.perm_idx[0] = perms.index(m.dram_perm)
    lat, en = _eval_batch(batch, accel, precisions)
    # recover traffic split for the report via a single numpy evaluation
    dram = _dram_traffic(m, precisions)
    return CostReport(latency=float(lat[0]), energy=float(en[0]),
                      traffic={"dram": dram}, compute_bound=_compute_bound(m, accel, dram))


def _dram_traffic(m: Mapping, precisions: tuple[int, int, int]) -> float:
    act_b, w_b, out_b = precisions
    P = dict(zip(m.nest.names, m.padded_extents()))
    F = dict(zip(m.nest.names, m.dram_factors()))
    pos = dict(zip(m.nest.names, m.positions()))

    def rel_pos(dims):
        live = [pos[d] for d in dims if F[d] > 1]
        return max(live) if live else -1

    if m.nest.is_conv:
        rw = rel_pos(("oc", "ic", "kh", "kw"))
        mult_w = (F["oh"] if pos["oh"] < rw else 1) * (F["ow"] if pos["ow"] < rw else 1)
        w_bytes = P["oc"] * P["ic"] * P["kh"] * P["kw"] * w_b * mult_w
        ri = rel_pos(("ic", "oh", "ow"))
        st = m.nest.stride
        ih = (P["oh"] - 1) * st + P["kh"]
        iw = (P["ow"] - 1) * st + P["kw"]
        i_bytes = P["ic"] * ih * iw * act_b * (F["oc"] if pos["oc"] < ri else 1)
        red = F["ic"] * F["kh"] * F["kw"]
        inner_out = rel_pos(("oc", "oh", "ow"))
        spill = any(F[r] > 1 and inner_out > pos[r] for r in ("ic", "kh", "kw"))
        o_elems = P["oc"] * P["oh"] * P["ow"]
        o_bytes = o_elems * 4 * red if spill else o_elems * out_b
        return float(w_bytes + i_bytes + o_bytes)
    r1 = rel_pos(("m", "k"))
    in1 = P["m"] * P["k"] * act_b * (F["n"] if pos["n"] < r1 else 1)
    r2 = rel_pos(("k", "n"))
    in2 = P["k"] * P["n"] * w_b * (F["m"] if pos["m"] < r2 else 1)
    spill = F["k"] > 1 and any(F[d] > 1 and pos[d] > pos["k"] for d in ("m", "n"))
    out = P["m"] * P["n"] * (4 * F["k"] if spill else out_b)
    return float(in1 + in2 + out)


def _compute_bound(m: Mapping, accel: AcceleratorConfig, dram: float) -> bool:
    P = m.padded_extents()
    macs = float(np.prod(np.array(P, dtype=np.float64)))
    if m.nest.is_conv:
        sp = m.spatial[0] * m.spatial[1]
    else:
        sp = m.spatial[0] * m.spatial[2]
    fills = accel.pe_width * float(np.prod(np.array(m.dram_factors(), dtype=np.float64)))
    return macs / sp + fills >= dram / accel.dram_bw


@dataclass(frozen=True)
class MapspaceStats:
    n_samples: int
    min_edp: float
    relative_edps: np.ndarray  # in sampling order
    cdf: np.ndarray            # sorted ascending
    p10: float

    @property
    def spread(self) -> float:
        return float(self.cdf[-1])

    def frac_within(self, k: float) -> float:
        return float(np.count_nonzero(self.relative_edps < k)) / self.n_samples


def sample_costs(nest: LoopNest, accel: AcceleratorConfig, n: int, seed: int,
                 precisions: tuple[int, int, int] = (1, 1, 1)):
    """(latency, energy) arrays over n uniformly sampled valid mappings."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lats = np.empty(0, dtype=np.float64)
    ens = np.empty(0, dtype=np.float64)
    for _ in range(_MAX_REJECTION_ROUNDS):
        need = n - len(lats)
        if need == 0:
            break
        batch = _sample_batch(nest, accel, max(need * 2, 1024), rng, precisions)
        ok = _valid_mask(batch, accel, precisions)
        if not ok.any():
            continue
        lat, en = _eval_batch(batch, accel, precisions)
        lats = np.concatenate([lats, lat[ok][:need]])
        ens = np.concatenate([ens, en[ok][:need]])
    if len(lats) < n:
        raise InfeasibleConfigError(
            f"could not draw {n} valid mappings for {nest.names}")
    return lats, ens


def sample_stats(nest: LoopNest, accel: AcceleratorConfig, n: int, seed: int,
                 precisions: tuple[int, int, int] = (1, 1, 1)) -> MapspaceStats:
    """EDP statistics over n uniformly sampled valid mappings."""
    lats, ens = sample_costs(nest, accel, n, seed, precisions)
    edps = lats * ens
    min_edp = float(edps.min())
    rel = edps / min_edp
    cdf = np.sort(rel)
    p10 = float(cdf[int(0.10 * (n - 1))])
    return MapspaceStats(n_samples=n, min_edp=min_edp, relative_edps=rel,
                         cdf=cdf, p10=p10)


def mapspace_size(nest: LoopNest, accel: AcceleratorConfig) -> int:
    """Number of (spatial, tiling, DRAM-perm) combinations, before validity."""
    W = accel.pe_width
    sdims = nest.spatial_dims
    total = 0
    spatial_sets = []
    for name, ext in nest.dims:
        spatial_sets.append(_divisors(W) if name in sdims else (1,))
    for svec in itertools.product(*spatial_sets):
        combos = 1
        for (name, ext), s in zip(nest.dims, svec):
            combos *= len(_tile_choices(ext, s))
        total += combos
    return total * math.factorial(len(nest.names))


_EXHAUSTIVE_GUARD = 10 ** 7


def exhaustive_best(nest: LoopNest, accel: AcceleratorConfig,
                    precisions: tuple[int, int, int] = (1, 1, 1)):
    """Enumerate every valid mapping; return (Mapping, CostReport) of the
    minimum-EDP one, ties broken lexicographically on the mapping encoding."""
    size = mapspace_size(nest, accel)
    if size > _EXHAUSTIVE_GUARD:
        raise MapspaceTooLargeError(
            f"mapspace has ~{size} mappings, above the {_EXHAUSTIVE_GUARD} guard")
    W = accel.pe_width
    sdims = nest.spatial_dims
    ndim = len(nest.names)
    spatial_sets = [(_divisors(W) if name in sdims else (1,)) for name, _ in nest.dims]

    best_key = None
    best_idx = None
    best_batch = None
    best_cost = None
    nperm = math.factorial(ndim)
    for svec in itertools.product(*spatial_sets):
        tile_sets = [_tile_choices(ext, s) for (_, ext), s in zip(nest.dims, svec)]
        tiles = np.array(list(itertools.product(*tile_sets)), dtype=np.int64)
        if not len(tiles):
            continue
        nt = len(tiles)
        batch = _Batch(nest, nt * nperm)
        batch.spatial[:] = np.array(svec, dtype=np.int64)[:, None]
        batch.tiles[:] = np.repeat(tiles.T, nperm, axis=1)
        batch.perm_idx[:] = np.tile(np.arange(nperm, dtype=np.int64), nt)
        ok = _valid_mask(batch, accel, precisions)
        if not ok.any():
            continue
        lat, en = _eval_batch(batch, accel, precisions)
        edp = lat * en
        edp[~ok] = np.inf
        i = int(np.argmin(edp))
        # lexicographic tie-break over equal-EDP candidates
        ties = np.flatnonzero(edp == edp[i])
        keys = sorted((_mapping_from_batch(batch, int(j), local_perm=nest.names).encode(), int(j))
                      for j in ties)
        i = keys[0][1]
        key = (float(edp[i]), keys[0][0])
        if best_key is None or key < best_key:
            best_key = key
            best_idx = i
            best_batch = batch
            best_cost = (float(lat[i]), float(en[i]))
    if best_batch is None:
        raise InfeasibleConfigError("no valid mapping in the exhaustive space")
    m = _mapping_from_batch(best_batch, best_idx, local_perm=nest.names)
    dram = _dram_traffic(m, precisions)
    report = CostReport(latency=best_cost[0], energy=best_cost[1],
                        traffic={"dram": dram},
                        compute_bound=_compute_bound(m, accel, dram))
    return m, report


def matched_mac_dims(conv: OperatorSpec, l: int, ffn_ratio: float = 4.0) -> tuple[int, int]:
    """Transformer dims whose projection matmuls match a conv's MAC count.

    d: query projection d*d*l has the conv's MACs; d_ffn_hidden: an FFN pair
    with hidden size ffn_ratio*d' (so ffn_ratio*d'^2*l MACs) matches it.
    """
    k = conv.kind
    if not isinstance(k, Conv):
        raise TypeError("matched_mac_dims needs a Conv operator")
    macs = k.kernel * k.kernel * k.in_ch * k.out_ch * k.out_h * k.out_w * k.repetitions
    d = round(math.sqrt(macs / l))
    d_ffn = round(math.sqrt(macs / (l * ffn_ratio)))
    return d, d_ffn
