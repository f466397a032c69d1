"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_conv.py [--repeat 5]

Reports the best wall time per kernel and backend, and the speedup of the
compiled core over the fallback.  Outputs of the two backends are checked to
agree before timing.
"""
import argparse
import timeit

import numpy as np

from alf import kernels
from alf.tensor import ConvGeometry, conv2d_fast, conv2d_naive

CASES = [
    # (N, H, W, Ci, Co, K, stride, padding)
    (8, 16, 16, 8, 16, 3, 1, 1),
    (32, 8, 8, 16, 16, 3, 1, 1),
    (4, 32, 32, 3, 32, 5, 1, 2),
]


def bench(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = kernels.available_backends()
    if len(backends) < 2:
        print("compiled backend not built; timing the Python fallback only")
    rng = np.random.default_rng(0)
    header = f"{'case':<28}{'kernel':<14}" + "".join(f"{b.BACKEND:>12}" for b in backends)
    print(header + ("   speedup" if len(backends) > 1 else ""))
    for n, h, w, ci, co, k, s, p in CASES:
        geom = ConvGeometry(k, s, p)
        x = rng.normal(size=(n, h, w, ci)).astype(np.float32)
        wt = rng.normal(size=(k, k, ci, co)).astype(np.float32)
        xp = np.pad(x.astype(np.float64), ((0, 0), (p, p), (p, p), (0, 0)))
        ref = conv2d_naive(x, wt, geom, backend=backends[0])
        for b in backends[1:]:
            assert np.abs(conv2d_naive(x, wt, geom, backend=b) - ref).max() < 1e-9
        kernels_to_time = {
            "direct": lambda b: conv2d_naive(x, wt, geom, backend=b),
            "im2col": lambda b: b.im2col(xp, k, s),
            "im2col+gemm": lambda b: conv2d_fast(x, wt, geom, backend=b),
        }
        label = f"{n}x{h}x{w}x{ci}->{co} K{k}"
        for name, fn in kernels_to_time.items():
            times = [bench(lambda b=b: fn(b), args.repeat) for b in backends]
            row = f"{label:<28}{name:<14}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
            if len(times) > 1:
                row += f"{times[1] / times[0]:>9.1f}x"
            print(row)


if __name__ == "__main__":
    main()
