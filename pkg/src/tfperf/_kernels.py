"""Batch mapping-evaluation kernels.

Two interchangeable backends compute identical float64 arithmetic:
- numba @njit scalar loops (default when numba imports cleanly);
- vectorized numpy (fallback, or forced with TFPERF_BACKEND=numpy).

All kernels take per-sample integer arrays (padded extents, spatial factors,
tile sizes, loop positions) plus scalar hardware parameters, and fill
latency/energy output arrays.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        if args and callable(args[0]):
            return args[0]
        return wrap


def backend() -> str:
    env = os.environ.get("TFPERF_BACKEND", "").strip().lower()
    if env in ("numba", "numpy"):
        if env == "numba" and not HAS_NUMBA:
            raise RuntimeError("TFPERF_BACKEND=numba but numba is not installed")
        return env
    return "numba" if HAS_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# Matmul mapping evaluation
# ---------------------------------------------------------------------------
# Loop positions count outward-in: pos 0 is the outermost DRAM loop. An input
# operand is re-fetched by an irrelevant outer loop whenever that loop sits
# above some iterating (F > 1) relevant loop; partial outputs spill when a
# reduction loop iterates above an iterating output-dim loop.

def _matmul_eval_np(Pm, Pk, Pn, sm, sn, tm, tk, tn, pos_m, pos_k, pos_n,
                    in1_b, in2_b, out_b, W, bw,
                    e_mac, e_spad, e_acc, e_dram, lat, en):
    Fm = Pm // tm
    Fk = Pk // tk
    Fn = Pn // tn

    neg = np.int64(-1)
    rel1 = np.maximum(np.where(Fm > 1, pos_m, neg), np.where(Fk > 1, pos_k, neg))
    mult1 = np.where(pos_n < rel1, Fn, 1)
    rel2 = np.maximum(np.where(Fk > 1, pos_k, neg), np.where(Fn > 1, pos_n, neg))
    mult2 = np.where(pos_m < rel2, Fm, 1)
    in1_bytes = (Pm * Pk).astype(np.float64) * in1_b * mult1
    in2_bytes = (Pk * Pn).astype(np.float64) * in2_b * mult2

    spill = (Fk > 1) & (((Fm > 1) & (pos_m > pos_k)) | ((Fn > 1) & (pos_n > pos_k)))
    out_elems = (Pm * Pn).astype(np.float64)
    out_bytes = np.where(spill, out_elems * 4.0 * Fk, out_elems * out_b)

    dram = in1_bytes + in2_bytes + out_bytes
    macs = Pm.astype(np.float64) * Pk * Pn
    compute = macs / (sm * sn).astype(np.float64) + W * (Fm * Fk * Fn).astype(np.float64)
    lat[:] = np.maximum(compute, dram / bw)
    spad = in1_bytes + in2_bytes + macs * (in1_b + in2_b) / W
    acc = macs * 4.0 / W + out_bytes
    en[:] = macs * e_mac + spad * e_spad + acc * e_acc + dram * e_dram


@njit(cache=True)
def _matmul_eval_nb(Pm, Pk, Pn, sm, sn, tm, tk, tn, pos_m, pos_k, pos_n,
                    in1_b, in2_b, out_b, W, bw,
                    e_mac, e_spad, e_acc, e_dram, lat, en):
    for i in range(Pm.shape[0]):
        Fm = Pm[i] // tm[i]
        Fk = Pk[i] // tk[i]
        Fn = Pn[i] // tn[i]

        rel1 = -1
        if Fm > 1 and pos_m[i] > rel1:
            rel1 = pos_m[i]
        if Fk > 1 and pos_k[i] > rel1:
            rel1 = pos_k[i]
        mult1 = Fn if pos_n[i] < rel1 else 1
        rel2 = -1
        if Fk > 1 and pos_k[i] > rel2:
            rel2 = pos_k[i]
        if Fn > 1 and pos_n[i] > rel2:
            rel2 = pos_n[i]
        mult2 = Fm if pos_m[i] < rel2 else 1
        in1_bytes = float(Pm[i] * Pk[i]) * in1_b * mult1
        in2_bytes = float(Pk[i] * Pn[i]) * in2_b * mult2

        spill = Fk > 1 and ((Fm > 1 and pos_m[i] > pos_k[i])
                            or (Fn > 1 and pos_n[i] > pos_k[i]))
        out_elems = float(Pm[i] * Pn[i])
        out_bytes = out_elems * 4.0 * Fk if spill else out_elems * out_b

        dram = in1_bytes + in2_bytes + out_bytes
        macs = float(Pm[i]) * Pk[i] * Pn[i]
        compute = macs / float(sm[i] * sn[i]) + W * float(Fm * Fk * Fn)
        mem = dram / bw
        lat[i] = compute if compute > mem else mem
        spad = in1_bytes + in2_bytes + macs * (in1_b + in2_b) / W
        acc = macs * 4.0 / W + out_bytes
        en[i] = macs * e_mac + spad * e_spad + acc * e_acc + dram * e_dram


def matmul_eval(Pm, Pk, Pn, sm, sn, tm, tk, tn, pos_m, pos_k, pos_n,
                in1_b, in2_b, out_b, W, bw, e_mac, e_spad, e_acc, e_dram):
    n = len(Pm)
    lat = np.empty(n, dtype=np.float64)
    en = np.empty(n, dtype=np.float64)
    fn = _matmul_eval_nb if backend() == "numba" else _matmul_eval_np
    fn(Pm, Pk, Pn, sm, sn, tm, tk, tn, pos_m, pos_k, pos_n,
       float(in1_b), float(in2_b), float(out_b), float(W), float(bw),
       float(e_mac), float(e_spad), float(e_acc), float(e_dram), lat, en)
    return lat, en


# ---------------------------------------------------------------------------
# Conv mapping evaluation
# ---------------------------------------------------------------------------
# Dim order everywhere: (oc, ic, kh, kw, oh, ow). The input footprint carries
# the kernel halo, so kh/kw loops never force input re-fetches.

def _conv_eval_np(P, s_oc, s_ic, T, pos, stride,
                  act_b, w_b, out_b, W, bw,
                  e_mac, e_spad, e_acc, e_dram, lat, en):
    Poc, Pic, Pkh, Pkw, Poh, Pow = (P[j] for j in range(6))
    F = [P[j] // T[j] for j in range(6)]
    Foc, Fic, Fkh, Fkw, Foh, Fow = F
    p_oc, p_ic, p_kh, p_kw, p_oh, p_ow = (pos[j] for j in range(6))

    neg = np.int64(-1)
    # weights: relevant {oc, ic, kh, kw}
    rel_w = np.maximum.reduce([
        np.where(Foc > 1, p_oc, neg), np.where(Fic > 1, p_ic, neg),
        np.where(Fkh > 1, p_kh, neg), np.where(Fkw > 1, p_kw, neg)])
    w_elems = (Poc * Pic * Pkh * Pkw).astype(np.float64)
    mult_w = (np.where(p_oh < rel_w, Foh, 1).astype(np.float64)
              * np.where(p_ow < rel_w, Fow, 1))
    w_bytes = w_elems * w_b * mult_w

    # input: relevant {ic, oh, ow}; halo'd footprint covers kh/kw
    rel_i = np.maximum.reduce([
        np.where(Fic > 1, p_ic, neg), np.where(Foh > 1, p_oh, neg),
        np.where(Fow > 1, p_ow, neg)])
    ih = (Poh - 1) * stride + Pkh
    iw = (Pow - 1) * stride + Pkw
    i_elems = (Pic * ih * iw).astype(np.float64)
    mult_i = np.where(p_oc < rel_i, Foc, 1).astype(np.float64)
    i_bytes = i_elems * act_b * mult_i

    # output: spills when a reduction loop iterates above an output loop
    red = (Fic * Fkh * Fkw).astype(np.float64)
    inner_out = np.maximum.reduce([
        np.where(Foc > 1, p_oc, neg), np.where(Foh > 1, p_oh, neg),
        np.where(Fow > 1, p_ow, neg)])
    spill = np.zeros(Poc.shape, dtype=bool)
    for fr, pr in ((Fic, p_ic), (Fkh, p_kh), (Fkw, p_kw)):
        spill |= (fr > 1) & (inner_out > pr)
    o_elems = (Poc * Poh * Pow).astype(np.float64)
    o_bytes = np.where(spill, o_elems * 4.0 * red, o_elems * out_b)

    dram = w_bytes + i_bytes + o_bytes
    macs = (Poc * Pic * Pkh * Pkw).astype(np.float64) * Poh * Pow
    fills = (Foc * Fic * Fkh).astype(np.float64) * Fkw * Foh * Fow
    compute = macs / (s_oc * s_ic).astype(np.float64) + W * fills
    lat[:] = np.maximum(compute, dram / bw)
    spad = w_bytes + i_bytes + macs * (act_b + w_b) / W
    acc = macs * 4.0 / W + o_bytes
    en[:] = macs * e_mac + spad * e_spad + acc * e_acc + dram * e_dram


@njit(cache=True)
def _conv_eval_nb(P, s_oc, s_ic, T, pos, stride,
                  act_b, w_b, out_b, W, bw,
                  e_mac, e_spad, e_acc, e_dram, lat, en):
    n = P.shape[1]
    for i in range(n):
        Poc, Pic, Pkh, Pkw, Poh, Pow = P[0, i], P[1, i], P[2, i], P[3, i], P[4, i], P[5, i]
        Foc = Poc // T[0, i]
        Fic = Pic // T[1, i]
        Fkh = Pkh // T[2, i]
        Fkw = Pkw // T[3, i]
        Foh = Poh // T[4, i]
        Fow = Pow // T[5, i]
        p_oc, p_ic, p_kh, p_kw, p_oh, p_ow = (pos[0, i], pos[1, i], pos[2, i],
                                              pos[3, i], pos[4, i], pos[5, i])

        rel_w = -1
        if Foc > 1 and p_oc > rel_w:
            rel_w = p_oc
        if Fic > 1 and p_ic > rel_w:
            rel_w = p_ic
        if Fkh > 1 and p_kh > rel_w:
            rel_w = p_kh
        if Fkw > 1 and p_kw > rel_w:
            rel_w = p_kw
        mult_w = 1.0
        if p_oh < rel_w:
            mult_w *= Foh
        if p_ow < rel_w:
            mult_w *= Fow
        w_bytes = float(Poc * Pic * Pkh * Pkw) * w_b * mult_w

        rel_i = -1
        if Fic > 1 and p_ic > rel_i:
            rel_i = p_ic
        if Foh > 1 and p_oh > rel_i:
            rel_i = p_oh
        if Fow > 1 and p_ow > rel_i:
            rel_i = p_ow
        ih = (Poh - 1) * stride + Pkh
        iw = (Pow - 1) * stride + Pkw
        mult_i = float(Foc) if p_oc < rel_i else 1.0
        i_bytes = float(Pic * ih * iw) * act_b * mult_i

        red = float(Fic * Fkh * Fkw)
        inner_out = -1
        if Foc > 1 and p_oc > inner_out:
            inner_out = p_oc
        if Foh > 1 and p_oh > inner_out:
            inner_out = p_oh
        if Fow > 1 and p_ow > inner_out:
            inner_out = p_ow
        spill = ((Fic > 1 and inner_out > p_ic)
                 or (Fkh > 1 and inner_out > p_kh)
                 or (Fkw > 1 and inner_out > p_kw))
        o_elems = float(Poc * Poh * Pow)
        o_bytes = o_elems * 4.0 * red if spill else o_elems * out_b

        dram = w_bytes + i_bytes + o_bytes
        macs = float(Poc * Pic * Pkh * Pkw) * Poh * Pow
        fills = float(Foc * Fic * Fkh) * Fkw * Foh * Fow
        compute = macs / float(s_oc[i] * s_ic[i]) + W * fills
        mem = dram / bw
        lat[i] = compute if compute > mem else mem
        spad = w_bytes + i_bytes + macs * (act_b + w_b) / W
        acc = macs * 4.0 / W + o_bytes
        en[i] = macs * e_mac + spad * e_spad + acc * e_acc + dram * e_dram


def conv_eval(P, s_oc, s_ic, T, pos, stride,
              act_b, w_b, out_b, W, bw, e_mac, e_spad, e_acc, e_dram):
    n = P.shape[1]
    lat = np.empty(n, dtype=np.float64)
    en = np.empty(n, dtype=np.float64)
    fn = _conv_eval_nb if backend() == "numba" else _conv_eval_np
    fn(P, s_oc, s_ic, T, pos, np.int64(stride),
       float(act_b), float(w_b), float(out_b), float(W), float(bw),
       float(e_mac), float(e_spad), float(e_acc), float(e_dram), lat, en)
    return lat, en
