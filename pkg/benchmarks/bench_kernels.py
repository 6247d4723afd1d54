"""Compare the compiled and numpy distance kernels.

    python benchmarks/bench_kernels.py [--repeats 5]

Prints median wall-clock per call and the speedup for a few (N, K, D)
shapes, and checks that both backends return identical results.
"""
import argparse
import time

import numpy as np

from codealign import _pykernels

try:
    from codealign import _ckernels
except ImportError:  # extension not built
    _ckernels = None

SHAPES = [(16, 512, 32), (320, 512, 32), (2000, 512, 32), (320, 4096, 32), (320, 64, 128)]


def _median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'N':>6} {'K':>6} {'D':>5} {'python ms':>10} {'cython ms':>10} {'speedup':>8}  same")
    for n, k, d in SHAPES:
        Z, P = rng.standard_normal((n, d)), rng.standard_normal((k, d))
        tp = _median_time(lambda: _pykernels.nearest(Z, P), args.repeats)
        tc = _median_time(lambda: _ckernels.nearest(Z, P), args.repeats)
        ip, dp = _pykernels.nearest(Z, P)
        ic, dc = _ckernels.nearest(Z, P)
        same = np.array_equal(ip, ic) and np.array_equal(dp, dc)
        print(f"{n:>6} {k:>6} {d:>5} {1e3 * tp:>10.3f} {1e3 * tc:>10.3f} {tp / tc:>8.2f}  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
