"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from supnoninf import _accel, kernels
from supnoninf.mvt import CorrelationMatrix, Rectangle, mvt_exch_tail_prob, mvt_rect_prob


def _time(fn, repeat):
    fn()  # warm-up (compilation for numba)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases():
    rng = np.random.default_rng(1)
    R4 = np.array([[1, .31, .25, .24], [.31, 1, .42, .67], [.25, .42, 1, .43], [.24, .67, .43, 1.]])
    rect = Rectangle.upper_orthant([1.5, 1.2, 1.8, 1.0])
    x1 = rng.standard_normal((100, 2))
    x2 = rng.standard_normal((100, 2))
    idx1 = rng.integers(0, 100, (1000, 100))
    idx2 = rng.integers(0, 100, (1000, 100))
    delta = rng.standard_normal((2000, 3))
    W = np.linalg.inv(np.array([[1, .5, .2], [.5, 1, .3], [.2, .3, 1.]]))
    return {
        "sov_qmc_m4": lambda: mvt_rect_prob(rect, CorrelationMatrix(R4), 67, target_abs_err=1e-5),
        "onefactor_m3": lambda: mvt_exch_tail_prob([2.0, 1.0, 1.0], 0.5, 50),
        "boot_stats_1000": lambda: kernels.boot_stats(x1, x2, idx1, idx2, np.zeros(2)),
        "orthant_dist2_2000": lambda: kernels.orthant_dist2(delta, W),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; only the numpy backend is available")
    print(f"{'kernel':<22}{'numba (ms)':>12}{'numpy (ms)':>12}{'speedup':>10}")
    for name, fn in cases().items():
        res = {}
        for backend in ("numba", "numpy"):
            if backend == "numba" and not _accel.HAVE_NUMBA:
                res[backend] = float("nan")
                continue
            prev = _accel.set_backend(backend)
            try:
                res[backend] = _time(fn, args.repeat) * 1e3
            finally:
                _accel.set_backend(prev)
        print(f"{name:<22}{res['numba']:>12.2f}{res['numpy']:>12.2f}{res['numpy'] / res['numba']:>10.1f}")


if __name__ == "__main__":
    main()
