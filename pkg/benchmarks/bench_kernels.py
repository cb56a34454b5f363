#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Times im2col / col2im (the convolution hot loops) and a full model forward
pass under both backends. The forward-pass comparison re-runs this script in
a subprocess with DROPSPREAD_NUMBA=0, since the backend is fixed at import
time.

Usage: python benchmarks/bench_kernels.py
"""

import os
import subprocess
import sys
import time

import numpy as np

from dropspread import backend


def timeit(fn, repeats=5):
    fn()  # warm-up (also triggers JIT compilation)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernels():
    rng = np.random.default_rng(0)
    shapes = [(1, 3, 256, 256), (1, 16, 128, 128), (4, 8, 64, 64)]
    print(f"active backend: {backend.backend_name()}")
    print(f"{'shape':>20} {'kernel':>8} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>8}")
    for shape in shapes:
        n, c, h, w = shape
        xp = rng.standard_normal((n, c, h + 2, w + 2))
        cols = rng.standard_normal((n, c * 9, h * w))

        t_np = timeit(lambda: backend.im2col_numpy(xp, 3, 3, h, w))
        row = f"{str(shape):>20} {'im2col':>8} {t_np * 1e3:12.2f}"
        if backend._HAVE_NUMBA:
            t_nb = timeit(lambda: backend.im2col_numba(xp, 3, 3, h, w))
            row += f" {t_nb * 1e3:12.2f} {t_np / t_nb:8.2f}x"
        print(row)

        t_np = timeit(lambda: backend.col2im_numpy(cols, c, 3, 3, h, w, 1, 1))
        row = f"{str(shape):>20} {'col2im':>8} {t_np * 1e3:12.2f}"
        if backend._HAVE_NUMBA:
            t_nb = timeit(lambda: backend.col2im_numba(cols, c, 3, 3, h, w, 1, 1))
            row += f" {t_nb * 1e3:12.2f} {t_np / t_nb:8.2f}x"
        print(row)


def bench_forward():
    from dropspread.model import ModelConfig, build_model, forward

    params = build_model(ModelConfig(pyramid_depth=4, base_channels=4), seed=0)
    image = np.random.default_rng(1).random((256, 256, 3))
    t = timeit(lambda: forward(params, image), repeats=3)
    print(f"forward 256x256 depth-4 [{backend.backend_name()}]: {t * 1e3:.1f} ms")


if __name__ == "__main__":
    bench_kernels()
    bench_forward()
    if backend.NUMBA_ENABLED and os.environ.get("_BENCH_CHILD") != "1":
        print("\nre-running forward pass with DROPSPREAD_NUMBA=0 ...")
        env = dict(os.environ, DROPSPREAD_NUMBA="0", _BENCH_CHILD="1")
        subprocess.run([sys.executable, "-c",
                        "from benchmarks.bench_kernels import bench_forward; "
                        "bench_forward()"],
                       env=env, cwd=os.path.dirname(os.path.dirname(
                           os.path.abspath(__file__))))
