"""Benchmark the compiled kernel core against the pure-numpy fallback.

Run:  python benchmarks/bench_kernels.py
Also asserts bit parity between the two backends on every workload.
"""

import time

import numpy as np
from scipy import ndimage

from fragmenta.kernels import _pure

try:
    from fragmenta.kernels import _speedups
except ImportError:
    _speedups = None


def _time(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _blob_mask(rng, h=900, w=900):
    yy, xx = np.mgrid[0:h, 0:w]
    mask = np.zeros((h, w), bool)
    for _ in range(6):
        cy, cx = rng.uniform(0.2, 0.8, 2) * (h, w)
        ry, rx = rng.uniform(0.1, 0.3, 2) * (h, w)
        mask |= ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1
    lab, n = ndimage.label(mask, structure=np.ones((3, 3)))
    sizes = ndimage.sum(mask, lab, range(1, n + 1))
    return (lab == 1 + np.argmax(sizes)).astype(np.uint8)


def workloads(rng):
    mask = _blob_mask(rng)
    feats = rng.normal(size=(2900, 64))
    sim = rng.random((1500, 1500)) * (rng.random((1500, 1500)) > 0.99)
    yield "trace_boundary (900x900 blob)", "trace_boundary", (mask,)
    yield "ring_window_sum (2900x64, k=8)", "ring_window_sum", (feats, 8)
    yield "erode_antidiagonal (1500^2)", "erode_antidiagonal_raw", (sim,)
    yield "dilate_antidiagonal (1500^2)", "dilate_antidiagonal_raw", (sim,)


def main():
    rng = np.random.default_rng(0)
    print(f"{'kernel':38s} {'pure':>10s} {'compiled':>10s} {'speedup':>8s}")
    for label, name, args in workloads(rng):
        t_pure, out_pure = _time(getattr(_pure, name), *args)
        if _speedups is None:
            print(f"{label:38s} {t_pure * 1e3:9.2f}ms {'n/a':>10s} {'-':>8s}")
            continue
        t_fast, out_fast = _time(getattr(_speedups, name), *args)
        assert np.array_equal(out_pure, out_fast), f"backend mismatch in {name}"
        print(f"{label:38s} {t_pure * 1e3:9.2f}ms {t_fast * 1e3:9.2f}ms "
              f"{t_pure / t_fast:7.1f}x")
    if _speedups is None:
        print("\ncompiled backend not built; install with Cython to compare")


if __name__ == "__main__":
    main()
