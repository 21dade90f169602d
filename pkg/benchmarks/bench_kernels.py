#!/usr/bin/env python3
"""Side-by-side timing of the compiled and numpy convolution backends.

Each kernel entry point runs on training-sized inputs; the table lists
per-call milliseconds and the compiled/numpy ratio. Both backend modules
are imported directly, so the comparison works regardless of which one
the package selected at import time (that choice is only reported).

Usage: python benchmarks/bench_kernels.py [--batch 8] [--size 32] [--repeats 20]
"""

import argparse
import statistics
import time

import numpy as np

import pinpred._kernels as kernels
from pinpred._kernels import fallback

try:
    from pinpred._kernels import _core
except ImportError:
    _core = None


def build_cases(batch, size, dtype):
    rng = np.random.default_rng(0)

    def arr(*shape):
        return rng.standard_normal(shape).astype(dtype)

    x = arr(batch, 16, size, size)
    w3 = arr(16, 16, 3, 3)
    w1 = arr(1, 16, 1, 1)
    w2 = arr(32, 16, 2, 2)
    gy = arr(batch, 16, size, size)
    gy2 = arr(batch, 32, size // 2, size // 2)
    return [
        ("forward 3x3 s1", "forward_s1", (x, w3)),
        ("forward 1x1 s1", "forward_s1", (x, w1)),
        ("forward 2x2 s2", "forward_s2", (x, w2)),
        ("backward input 3x3 s1", "backward_input_s1", (gy, w3)),
        ("backward input 2x2 s2", "backward_input_s2", (gy2, w2)),
        ("backward weight 3x3 s1", "backward_weight_s1", (gy, x, 3, 3)),
        ("backward weight 2x2 s2", "backward_weight_s2", (gy2, x)),
    ]


def time_call(fn, args, repeats):
    fn(*args)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        samples.append(time.perf_counter() - t0)
    return 1e3 * statistics.median(samples)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--size", type=int, default=32, help="square grid edge (even)")
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    args = ap.parse_args()

    print(f"package backend: {kernels.BACKEND}")
    if _core is None:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"batch {args.batch}, grid {args.size}x{args.size}, {args.dtype}, median of {args.repeats}\n")

    header = f"{'kernel':<26}{'numpy ms':>10}{'compiled ms':>13}{'ratio':>8}"
    print(header)
    print("-" * len(header))
    for name, fn_name, call_args in build_cases(args.batch, args.size, np.dtype(args.dtype)):
        t_np = time_call(getattr(fallback, fn_name), call_args, args.repeats)
        if _core is not None:
            t_c = time_call(getattr(_core, fn_name), call_args, args.repeats)
            print(f"{name:<26}{t_np:>10.3f}{t_c:>13.3f}{t_np / t_c:>8.1f}x")
        else:
            print(f"{name:<26}{t_np:>10.3f}{'-':>13}{'-':>8}")


if __name__ == "__main__":
    main()
