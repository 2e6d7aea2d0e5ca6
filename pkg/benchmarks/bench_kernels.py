"""Compare the numba kernels with their numpy/Python twins.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one JSON object per kernel with median wall times and whether both
paths returned identical results.
"""

import argparse
import json
import statistics
import time

import numpy as np

from tana import _accel
from tana.simulation import tdoa_offsets_us

MICS = np.array([(0.0, 0.0, 0.5), (0.0, 0.0, 1.0), (0.0, 0.0, 1.5)])


def timed(fn, repeat):
    fn()  # warm-up, includes jit compilation on the first call
    samples = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        samples.append(time.perf_counter() - start)
    return statistics.median(samples), out


def bench_grid(repeat):
    offsets = np.array(tdoa_offsets_us(MICS, (2.0, 1.0, 0.2), 343.0))
    # one 4 x 3 x 3 m room at 2.5 cm
    args = (MICS, offsets, 343.0, (0.0, 0.0, 0.0), 0.025, (160, 120, 120))
    t_jit, a = timed(lambda: _accel.grid_search_numba(*args), repeat)
    t_np, b = timed(lambda: _accel.grid_search_numpy(*args), repeat)
    return {"kernel": "grid_search", "cells": 160 * 120 * 120, "numba_s": round(t_jit, 4),
            "numpy_s": round(t_np, 4), "speedup": round(t_np / t_jit, 1), "identical": a == b}


def bench_scan(repeat):
    rng = np.random.default_rng(0)
    # one hour at 100 Hz with a fall-like episode every 30 s
    n = 360_000
    mag = 1.0 + rng.normal(0, 0.05, n)
    for start in range(1000, n - 200, 3000):
        mag[start:start + 30] = 0.05
        mag[start + 30:start + 34] = [3.0, 2.5, 2.0, 1.5]
    t = np.arange(n) * 0.01
    args = (t, mag, 0.3, 0.2, 2.5, 0.8)
    t_jit, a = timed(lambda: _accel.scan_impacts_numba(*args), repeat)
    t_py, b = timed(lambda: _accel.scan_impacts_python(*args), repeat)
    return {"kernel": "scan_impacts", "samples": n, "impacts": int(len(a)),
            "numba_s": round(t_jit, 4), "python_s": round(t_py, 4),
            "speedup": round(t_py / t_jit, 1), "identical": bool(np.array_equal(a, b))}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.NUMBA_AVAILABLE:
        raise SystemExit("numba is not importable; nothing to compare")
    for result in (bench_grid(args.repeat), bench_scan(args.repeat)):
        print(json.dumps(result))


if __name__ == "__main__":
    main()
