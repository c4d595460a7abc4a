"""Compare the compiled and numpy kernel-assembly backends.

    python3 benchmarks/bench_kernels.py [--reps 5]

Prints the median wall time per block for both kernels, and checks that the
two backends agree bit-for-bit.
"""
import argparse
import statistics
import time

import numpy as np

from kernelskel._backend import INV_DIST, MULTIQUADRIC, backends
from kernelskel.geometry import rng

SHAPES = [(1500, 15000, 2), (1000, 64000, 3), (300, 300, 2)]


def bench(fn, kind, X, Y, reps):
    out = np.empty((X.shape[0], Y.shape[0]))
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(kind, X, Y, out)
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()
    avail = backends()
    if "cython" not in avail:
        print("compiled core not built; only the numpy fallback is available")
    g = rng(0)
    print(f"{'shape':>22} {'kernel':>12} " + " ".join(f"{b:>10}" for b in avail) + "  speedup")
    for n, m, d in SHAPES:
        X = g.uniform(-1, 1, (n, d))
        Y = g.uniform(3, 9, (m, d))
        for kind, name in ((INV_DIST, "inv-dist"), (MULTIQUADRIC, "multiquadric")):
            res = {b: bench(fn, kind, X, Y, args.reps) for b, fn in avail.items()}
            cells = " ".join(f"{res[b][0]:10.4f}" for b in avail)
            speed = ""
            if "cython" in res:
                speed = f"{res['python'][0] / res['cython'][0]:8.2f}x"
                assert np.array_equal(res["python"][1], res["cython"][1]), "backends disagree"
            print(f"{str((n, m, d)):>22} {name:>12} {cells} {speed}")


if __name__ == "__main__":
    main()
