#!/usr/bin/env python3
"""Benchmark the compiled conv kernels against the numpy fallback.

Usage: python benchmarks/bench_conv.py [--repeats N]
"""

import argparse
import time

import numpy as np

from abaffinity.kernels import fallback

try:
    from abaffinity.kernels import _convkernels as ext
except ImportError:
    ext = None

CASES = [
    # (L, C_in, C_out, K)   desk scale -> full scale
    (8, 16, 8, 3),
    (64, 32, 16, 5),
    (128, 128, 64, 3),
    (512, 480, 256, 3),
    (512, 256, 128, 5),
]


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if ext is None:
        print("compiled kernels not built; benchmarking fallback only")

    header = f"{'case (L,Cin,Cout,K)':24} {'dir':8} {'numpy':>12} {'compiled':>12} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    rng = np.random.default_rng(0)
    for length, c_in, c_out, k in CASES:
        x = rng.standard_normal((length, c_in)).astype(np.float32)
        w = rng.standard_normal((k, c_in, c_out)).astype(np.float32)
        b = rng.standard_normal(c_out).astype(np.float32)
        g = rng.standard_normal((length, c_out)).astype(np.float32)

        for direction, np_fn, ext_fn in [
            ("fwd", lambda: fallback.conv1d_forward(x, w, b),
             (lambda: ext.conv1d_forward(x, w, b)) if ext else None),
            ("bwd", lambda: fallback.conv1d_backward(x, w, g),
             (lambda: ext.conv1d_backward(x, w, g)) if ext else None),
        ]:
            t_np = timeit(np_fn, args.repeats)
            if ext_fn is not None:
                t_ext = timeit(ext_fn, args.repeats)
                ratio = t_np / t_ext
                print(f"{str((length, c_in, c_out, k)):24} {direction:8} "
                      f"{t_np * 1e3:10.3f}ms {t_ext * 1e3:10.3f}ms {ratio:7.2f}x")
            else:
                print(f"{str((length, c_in, c_out, k)):24} {direction:8} "
                      f"{t_np * 1e3:10.3f}ms {'-':>12} {'-':>8}")


if __name__ == "__main__":
    main()
