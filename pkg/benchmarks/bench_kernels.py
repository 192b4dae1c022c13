#!/usr/bin/env python3
"""Compare the numba and numpy kernel backends on training-sized inputs.

Usage: python benchmarks/bench_kernels.py [--reps 50]

Times the fused loss forward+gradient kernels and the AdamW update at a
few batch shapes. The first numba call per kernel compiles (cached across
runs); compilation time is excluded by a warmup call.
"""

import argparse
import time

import numpy as np

from wincel import kernels
from wincel.linalg import normalize_rows


def make_batch(rng, n, k, d):
    V, _ = normalize_rows(rng.standard_normal((n, d)))
    T = rng.standard_normal((n, k, d))
    for i in range(n):
        T[i], _ = normalize_rows(T[i])
    mask = rng.random((n, k)) > 0.3
    mask[:, 0] = True
    T[~mask] = 0.0
    return V, T, mask


def time_call(fn, reps):
    fn()  # warmup / compile
    start = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - start) / reps * 1000.0


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=50)
    args = parser.parse_args()

    backends = ["numpy"]
    if kernels.NUMBA_AVAILABLE:
        backends.append("numba")
    else:
        print("numba not importable; benchmarking numpy only")

    shapes = [(64, 8, 64), (256, 15, 512), (512, 15, 768)]
    rng = np.random.default_rng(0)

    print(f"{'kernel':10s} {'shape':18s} " + "".join(f"{b:>12s}" for b in backends) + "   speedup")
    for n, k, d in shapes:
        V, T, mask = make_batch(rng, n, k, d)
        row = {}
        for backend in backends:
            impl = kernels.get_impl(backend)
            row[backend] = time_call(
                lambda impl=impl: impl["wincel"](V, T, mask, 0.15, 0.15, True, True), args.reps
            )
        line = f"{'wincel':10s} N={n:<4d}K={k:<3d}D={d:<5d}" + "".join(
            f"{row[b]:10.2f}ms" for b in backends
        )
        if len(backends) == 2:
            line += f"   {row['numpy'] / row['numba']:.2f}x"
        print(line)

        T_one = np.ascontiguousarray(T[:, 0, :])
        for backend in backends:
            impl = kernels.get_impl(backend)
            row[backend] = time_call(lambda impl=impl: impl["infonce"](V, T_one, 0.07), args.reps)
        line = f"{'infonce':10s} N={n:<4d}D={d:<5d}      " + "".join(
            f"{row[b]:10.2f}ms" for b in backends
        )
        if len(backends) == 2:
            line += f"   {row['numpy'] / row['numba']:.2f}x"
        print(line)

    # AdamW on a projection-head-sized parameter block.
    for d_in, d_out in [(512, 512), (768, 768)]:
        param0 = rng.standard_normal((d_in, d_out))
        grad = rng.standard_normal((d_in, d_out))
        row = {}
        for backend in backends:
            impl = kernels.get_impl(backend)
            param = param0.copy()
            m = np.zeros_like(param)
            v = np.zeros_like(param)

            def step(impl=impl, param=param, m=m, v=v):
                impl["adamw"](param, grad, m, v, 5, 1e-3, 0.9, 0.999, 1e-8, 0.01)

            row[backend] = time_call(step, args.reps)
        line = f"{'adamw':10s} {d_in}x{d_out:<11d}" + "".join(
            f"{row[b]:10.2f}ms" for b in backends
        )
        if len(backends) == 2:
            line += f"   {row['numpy'] / row['numba']:.2f}x"
        print(line)


if __name__ == "__main__":
    main()
