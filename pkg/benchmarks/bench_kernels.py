"""Compare the numba and numpy mapping-evaluation backends.

Runs identical sampling workloads through both backends and reports wall
time and results equality. Numba is warmed first so JIT compilation is not
billed to the measurement.

Usage: python3 benchmarks/bench_kernels.py [n_samples]
"""
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from tfperf import _kernels
from tfperf.hwmodel import accel_preset
from tfperf.mapspace import NAMED_NESTS, sample_costs


def run(backend: str, n: int) -> dict[str, tuple[float, np.ndarray, np.ndarray]]:
    os.environ["TFPERF_BACKEND"] = backend
    out = {}
    accel = accel_preset("gemmini-baseline")
    for name in ("bert.mha", "bert.qk", "resnet.c3"):
        t0 = time.perf_counter()
        lats, ens = sample_costs(NAMED_NESTS[name], accel, n, seed=0)
        out[name] = (time.perf_counter() - t0, lats, ens)
    return out


def main() -> int:
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 100_000
    if not _kernels.HAS_NUMBA:
        print("numba not installed; nothing to compare")
        return 1
    run("numba", 1000)  # warm the JIT cache
    nb = run("numba", n)
    np_ = run("numpy", n)
    print(f"{'nest':<12} {'numpy (s)':>10} {'numba (s)':>10} {'numba/numpy':>12} match")
    for name in nb:
        t_nb, l_nb, e_nb = nb[name]
        t_np, l_np, e_np = np_[name]
        same = np.array_equal(l_nb, l_np) and np.array_equal(e_nb, e_np)
        print(f"{name:<12} {t_np:>10.3f} {t_nb:>10.3f} {t_nb / t_np:>12.2f} {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
