"""Time the numba kernels against their pure-numpy fallbacks.

Run:  python3 benchmarks/bench_kernels.py [--reps 5]

Prints one row per kernel and size with the median wall time of both
paths and the speed ratio. The numba path is warmed up once before
timing so compilation cost never lands in a measurement.
"""

import argparse
import statistics
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from daefusion import _kernels  # noqa: E402
from daefusion.numerics import rng  # noqa: E402


def median_time(fn, reps):
    fn()  # warm-up (numba compiles here on first call)
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases():
    gen = rng(0)
    for hw in (32, 64, 128):
        x = gen.normal(size=(hw, hw, 16))
        kernel = gen.normal(size=(3, 3, 16))
        bias = gen.normal(size=(16,))
        yield (f"dwconv3x3 {hw}x{hw}x16",
               lambda x=x, k=kernel, b=bias: _kernels._dwconv3x3_jit(x, k, b),
               lambda x=x, k=kernel, b=bias: _kernels.dwconv3x3_numpy(x, k, b))
    for hw in (64, 128, 256):
        image = gen.normal(size=(hw, hw, 3))
        yield (f"unfold 7/4/3 {hw}x{hw}x3",
               lambda im=image: _kernels._unfold_windows_jit(im, 7, 4, 3),
               lambda im=image: _kernels.unfold_windows_numpy(im, 7, 4, 3))
    for npts in (200, 800):
        a = gen.uniform(0, 100, size=(npts, 2))
        b = gen.uniform(0, 100, size=(npts, 2))
        yield (f"hausdorff {npts}x{npts}",
               lambda a=a, b=b: _kernels._hausdorff_directed_jit(a, b),
               lambda a=a, b=b: _kernels.hausdorff_directed_numpy(a, b))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--reps", type=int, default=5)
    args = parser.parse_args()

    if not _kernels.HAS_NUMBA:
        print("numba is not importable; nothing to compare")
        return 1

    print(f"{'kernel':<28} {'numba_s':>12} {'numpy_s':>12} {'ratio':>8}")
    for name, jit_fn, np_fn in cases():
        out_a = np.asarray(jit_fn())
        out_b = np.asarray(np_fn())
        if not np.allclose(out_a, out_b, atol=1e-12, rtol=0):
            print(f"{name}: PATHS DISAGREE")
            return 1
        tj = median_time(jit_fn, args.reps)
        tn = median_time(np_fn, args.reps)
        print(f"{name:<28} {tj:12.6f} {tn:12.6f} {tn / tj:8.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
