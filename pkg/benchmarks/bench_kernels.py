"""Compare the compiled and numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from shapelm import _kernels_py, shapes
from shapelm.mesh import candidate_pairs

try:
    from shapelm import _kernels as compiled
except ImportError:
    compiled = None


def cases():
    g = shapes.rng(0).normal(size=(200000, 3))
    yield "shrink_rows 200k", lambda impl: impl.shrink_rows(g, 0.5)
    for subdiv in (3, 4):
        m = shapes.perturb_vertices(shapes.icosphere(subdiv), 0.5 / 2 ** (subdiv - 3), 11)
        pairs = candidate_pairs(m)
        yield (f"intersecting_pairs {len(pairs)} pairs",
               lambda impl, m=m, pairs=pairs: impl.intersecting_pairs(m.vertices, m.faces, pairs))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = [("python", _kernels_py)] + ([("cython", compiled)] if compiled else [])
    print(f"{'kernel':<36}" + "".join(f"{name:>12}" for name, _ in backends) + "     speedup")
    for label, fn in cases():
        times = []
        for _, impl in backends:
            fn(impl)  # warm up
            times.append(min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)))
        row = f"{label:<36}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>11.1f}x"
        print(row)
    if compiled is None:
        print("compiled kernels not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
