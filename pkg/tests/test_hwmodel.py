"""Tiled latency/energy model: tiling plans, per-op costs, model views."""
import math

import pytest
from hypothesis import given, settings, strategies as st

from tfperf.workload import (
    Elementwise,
    Matmul,
    MatvecSeries,
    ModelConfig,
    OperatorClass,
    OperatorSpec,
    encoder_ops,
    flops,
    model_preset,
)
from tfperf.hwmodel import (
    AcceleratorConfig,
    EnergyTable,
    InfeasibleConfigError,
    TilingPlan,
    _wide_flags,
    accel_from_json,
    accel_preset,
    greedy_tiles,
    matmul_dims,
    memory_split_sweep,
    model_costs,
    model_nonideal_intensity,
    nonideal_intensity,
    nonlinear_latency_share,
    op_latency,
    square_tiles,
)


def _op(name: str, cfg: ModelConfig) -> OperatorSpec:
    return {o.name: o for o in encoder_ops(cfg)}[name]


# ---------------------------------------------------------------------------
# Tiling plans
# ---------------------------------------------------------------------------

def test_square_tiles_narrow_and_wide(accel, bert512):
    sq = square_tiles(_op("L0.wq", bert512), accel)
    assert (sq.tile_m, sq.tile_k, sq.tile_n) == (176, 176, 176)
    assert not sq.wide_output
    wout = square_tiles(_op("L0.wout", bert512), accel)
    assert (wout.tile_m, wout.tile_k, wout.tile_n) == (80, 80, 80)
    assert wout.wide_output  # 4-byte accumulator rows shrink the tile


def test_greedy_tiles_extend_k_first(accel, bert512):
    expect = {
        "L0.wq": (176, 736, 176),
        "L0.qk": (96, 64, 80),
        "L0.wout": (96, 768, 80),
        "L0.w2": (80, 1632, 80),
    }
    for name, tiles in expect.items():
        g = greedy_tiles(_op(name, bert512), accel)
        assert (g.tile_m, g.tile_k, g.tile_n) == tiles, name


def test_greedy_never_smaller_than_square(accel, bert512):
    for op in encoder_ops(bert512):
        if not isinstance(op.kind, Matmul):
            continue
        s, g = square_tiles(op, accel), greedy_tiles(op, accel)
        assert g.tile_m >= s.tile_m and g.tile_k >= s.tile_k and g.tile_n >= s.tile_n


def test_square_tiles_infeasible_spad():
    tiny = AcceleratorConfig(scratchpad_bytes=128, accumulator_bytes=64 * 1024)
    op = OperatorSpec("t", OperatorClass.FfnProjection, Matmul(64, 64, 64))
    with pytest.raises(InfeasibleConfigError):
        square_tiles(op, tiny)


def test_matmul_dims_lowering(bert512):
    from tfperf.workload import resnet50_ops
    conv = resnet50_ops()[0]
    m, k, n = matmul_dims(conv)
    assert m == conv.kind.out_h * conv.kind.out_w
    assert k == conv.kind.kernel ** 2 * conv.kind.in_ch
    assert n == conv.kind.out_ch
    with pytest.raises(TypeError):
        matmul_dims(OperatorSpec("t", OperatorClass.Nonlinear, Elementwise(8, 1, 1)))


# ---------------------------------------------------------------------------
# Per-op cost, hand-checked
# ---------------------------------------------------------------------------

def test_single_tile_matmul_hand_computed(accel):
    op = OperatorSpec("t", OperatorClass.FfnProjection, Matmul(16, 16, 16))
    rep = op_latency(op, accel)
    # one 16x16x16 tile: 768 B moved, 16*1*1 + 16 = 32 compute cycles
    assert rep.latency == 768 / 3.0
    assert rep.traffic["dram"] == 768
    assert not rep.compute_bound
    macs = 16 ** 3
    assert rep.traffic["spad"] == 768 + macs * 2 / 16
    assert rep.traffic["acc"] == macs * 4 / 16 + 256
    fast = AcceleratorConfig(dram_bw=1000.0)
    rep2 = op_latency(op, fast)
    assert rep2.latency == 32
    assert rep2.compute_bound


def test_resident_operands_load_once(accel):
    op = OperatorSpec("t", OperatorClass.FfnProjection, Matmul(32, 32, 96))
    rep = op_latency(op, accel)
    # both operands fit on chip: every byte crosses DRAM exactly once
    assert rep.traffic["dram"] == 32 * 32 + 32 * 96 + 32 * 96


def test_nonresident_operands_reload(accel):
    op = OperatorSpec("t", OperatorClass.FfnProjection, Matmul(64, 64, 64))
    small = AcceleratorConfig(scratchpad_bytes=4096, accumulator_bytes=64 * 1024)
    rep = op_latency(op, small)
    ideal = 3 * 64 * 64
    # 2x2x2 grid of 32-cubes: in1 and in2 each stream once per partner block
    assert rep.traffic["dram"] == 8 * 1024 + 8 * 1024 + 4 * 1024
    assert rep.traffic["dram"] > ideal
    assert op_latency(op, accel).traffic["dram"] == ideal


def test_wq_frozen_costs(accel, bert512):
    rep = op_latency(_op("L0.wq", bert512), accel)
    assert rep.latency == pytest.approx(1397418.6666666667, rel=1e-12)
    assert rep.traffic["dram"] == 4128768.0
    assert not rep.compute_bound


def test_energy_identity(accel, bert512):
    op = _op("L0.wq", bert512)
    rep = op_latency(op, accel)
    macs = flops(op) / 2  # weight matmul: 2 flops per MAC
    want = (macs * 1.0 + rep.traffic["spad"] * 6.0
            + rep.traffic["acc"] * 12.0 + rep.traffic["dram"] * 200.0)
    assert rep.energy == pytest.approx(want, rel=1e-12)
    assert rep.edp == rep.latency * rep.energy


def test_repeat_scales_costs(accel):
    base = OperatorSpec("t", OperatorClass.ActToAct, Matmul(64, 64, 64),
                        pre_nonlinear=True)
    x3 = OperatorSpec("t", OperatorClass.ActToAct, Matmul(64, 64, 64),
                      repeat=3, pre_nonlinear=True)
    r1, r3 = op_latency(base, accel), op_latency(x3, accel)
    assert r3.latency == pytest.approx(3 * r1.latency)
    assert r3.energy == pytest.approx(3 * r1.energy)
    assert r3.traffic["dram"] == pytest.approx(3 * r1.traffic["dram"])


def test_wide_output_drains_four_bytes(accel):
    spec = dict(op_class=OperatorClass.ActToAct, kind=Matmul(64, 64, 64))
    narrow = op_latency(OperatorSpec("n", **spec), accel,
                        plan=TilingPlan(64, 64, 64, wide_output=False))
    wide = op_latency(OperatorSpec("w", **spec), accel,
                      plan=TilingPlan(64, 64, 64, wide_output=True))
    assert wide.traffic["dram"] - narrow.traffic["dram"] == 64 * 64 * 3


def test_matvec_series_memory_bound(accel):
    op = OperatorSpec("t", OperatorClass.MhaProjection, MatvecSeries(768, 768, 64))
    rep = op_latency(op, accel)
    assert not rep.compute_bound
    per_iter = 768 * 768 + 768 + 768
    assert rep.traffic["dram"] == per_iter * 64


def test_idealized_matvec_collapses_compute():
    op = OperatorSpec("t", OperatorClass.MhaProjection, MatvecSeries(768, 768, 8))
    fast = AcceleratorConfig(dram_bw=1e9)
    ideal = AcceleratorConfig(dram_bw=1e9, idealized_matvec=True)
    assert op_latency(op, ideal).latency < op_latency(op, fast).latency
    assert op_latency(op, ideal).latency == 8  # one cycle per step


def test_elementwise_wide_inputs(accel):
    op = OperatorSpec("t", OperatorClass.Nonlinear, Elementwise(4096, 5, 3))
    narrow = op_latency(op, accel, wide_inputs=False)
    wide = op_latency(op, accel, wide_inputs=True)
    # standalone wide read: 3 four-byte passes + 1-byte store = 13 B/element
    assert wide.traffic["dram"] == 4096 * 13
    assert narrow.traffic["dram"] == 4096 * (3 * 1 + 1)
    assert wide.latency > narrow.latency


def test_nonideal_intensity_below_ideal(accel, bert512):
    from tfperf.workload import mops
    for op in encoder_ops(bert512):
        wide = isinstance(op.kind, Elementwise)
        nai = nonideal_intensity(op, accel, wide_inputs=wide)
        assert nai <= flops(op) / mops(op) + 1e-12, op.name


# ---------------------------------------------------------------------------
# Model-level views
# ---------------------------------------------------------------------------

def test_wide_flags_pattern(bert512):
    ops = encoder_ops(bert512)
    flags = _wide_flags(ops)
    per_layer = {op.name.split(".", 1)[1]: f for op, f in zip(ops[:12], flags[:12])}
    assert per_layer == {
        "wq": False, "wk": False, "wv": False, "qk": False,
        "softmax": True, "sv": False, "wout": False, "add_ln1": True,
        "w1": False, "gelu": False, "w2": False, "add_ln2": True,
    }
    assert flags == flags[:12] * bert512.num_layers


def test_model_costs_cover_all_ops(accel, bert512):
    costs = model_costs(bert512, accel)
    assert len(costs) == 12 * 12
    assert all(rep.latency > 0 and rep.energy > 0 for _, rep in costs)


def test_decoder_all_memory_bound(accel):
    gpt = model_preset("gpt2", 512)
    assert all(not rep.compute_bound for _, rep in model_costs(gpt, accel))


def test_latency_decreases_with_bandwidth(bert512):
    lats = []
    for bw in (1.0, 3.0, 16.0):
        a = AcceleratorConfig(dram_bw=bw)
        lats.append(sum(rep.latency for _, rep in model_costs(bert512, a)))
    assert lats[0] > lats[1] > lats[2]


def test_traffic_monotone_in_scratchpad(bert512):
    traffics = []
    for kb in (64, 256, 1024):
        a = AcceleratorConfig(scratchpad_bytes=kb * 1024)
        traffics.append(sum(rep.traffic["dram"] for _, rep in model_costs(bert512, a)))
    assert traffics[0] >= traffics[1] >= traffics[2]
    assert traffics[0] > traffics[2]


def test_model_nonideal_intensity_frozen(accel, bert512):
    assert model_nonideal_intensity(bert512, accel) == pytest.approx(56.48076923076923, rel=1e-9)


def test_memory_split_sweep(bert512):
    rows, best = memory_split_sweep(bert512, 320)
    assert len(rows) == 19
    assert best["split"] == (64, 256)
    default = next(r for r in rows if r["split"] == (256, 64))
    margin = 1 - best["latency"] / default["latency"]
    assert margin == pytest.approx(0.23837745820126488, rel=1e-9)
    assert margin >= 0.2
    with pytest.raises(InfeasibleConfigError):
        memory_split_sweep(bert512, 320, splits=[(100, 100)])


def test_nonlinear_latency_share_resnet(accel):
    res = model_preset("resnet50", 512)
    share = nonlinear_latency_share(res, accel)
    assert share == pytest.approx(0.35169199434912174, rel=1e-9)
    assert 0.244 <= share <= 0.404


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------

def test_accel_presets():
    base = accel_preset("gemmini-baseline")
    assert (base.scratchpad_bytes, base.accumulator_bytes) == (256 * 1024, 64 * 1024)
    tuned = accel_preset("gemmini-tuned")
    assert (tuned.scratchpad_bytes, tuned.accumulator_bytes) == (64 * 1024, 256 * 1024)
    with pytest.raises(InfeasibleConfigError):
        accel_preset("nope")


def test_accel_from_json():
    a = accel_from_json('{"pe_width": 8, "scratchpad_kb": 32, "dram_bytes_per_cycle": 4}')
    assert a.pe_width == 8
    assert a.scratchpad_bytes == 32 * 1024
    assert a.dram_bw == 4.0
    assert a.energy.dram_access == 200.0
    b = accel_from_json({"energy": {"dram": 100, "spad": 2}})
    assert (b.energy.dram_access, b.energy.scratchpad_access) == (100.0, 2.0)


def test_accel_check_errors():
    with pytest.raises(InfeasibleConfigError):
        AcceleratorConfig(pe_width=0).check()
    with pytest.raises(InfeasibleConfigError):
        AcceleratorConfig(dram_bw=0).check()
    with pytest.raises(InfeasibleConfigError):
        AcceleratorConfig(energy=EnergyTable(dram_access=1.0)).check()
    with pytest.raises(InfeasibleConfigError):
        accel_from_json({"pe_width": "wide"})


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 300), k=st.integers(1, 300), n=st.integers(1, 300))
def test_latency_at_least_compute_and_drain(m, k, n):
    accel = accel_preset("gemmini-baseline")
    op = OperatorSpec("t", OperatorClass.FfnProjection, Matmul(m, k, n))
    rep = op_latency(op, accel)
    assert rep.latency >= rep.traffic["dram"] / accel.dram_bw - 1e-9
    assert rep.traffic["dram"] >= m * k + k * n + m * n  # every byte at least once


@settings(max_examples=30, deadline=None)
@given(bw=st.floats(0.5, 64.0))
def test_op_latency_monotone_in_bw(bw):
    op = OperatorSpec("t", OperatorClass.FfnProjection, Matmul(256, 256, 256))
    lo = op_latency(op, AcceleratorConfig(dram_bw=bw)).latency
    hi = op_latency(op, AcceleratorConfig(dram_bw=bw * 2)).latency
    assert hi <= lo + 1e-9
