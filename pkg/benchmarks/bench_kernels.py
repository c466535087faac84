"""Compare the compiled and pure-Python kernels on a planted-partition graph.

Usage: python benchmarks/bench_kernels.py [--nodes N] [--patches P] [--repeat R]
"""
import argparse
import math
import time

import numpy as np

from patchsync import _kernels_py
from patchsync.evaluation import planted_partition_graph

try:
    from patchsync import _kernels
except ImportError:  # extension not built
    _kernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def bench_fennel(mod, g, p, repeat):
    indptr = np.asarray(g.indptr, dtype=np.int64)
    indices = np.asarray(g.indices, dtype=np.int64)
    alpha = g.m * p ** 0.5 / g.n ** 1.5
    cap = math.floor(1.1 * g.n / p)

    def run():
        assignment = np.full(g.n, -1, dtype=np.int64)
        sizes = np.zeros(p, dtype=np.int64)
        mod.fennel_stream(indptr, indices, assignment, sizes, alpha, 1.5, float(cap), 2)
        return assignment

    return best_of(run, repeat)


def bench_frontier(mod, g, repeat):
    indptr = np.asarray(g.indptr, dtype=np.int64)
    indices = np.asarray(g.indices, dtype=np.int64)
    nodes = np.arange(0, g.n, 7, dtype=np.int64)
    allowed = (np.arange(g.n) % 3 == 0).astype(np.uint8)
    return best_of(lambda: mod.frontier(indptr, indices, nodes, allowed), repeat)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=20000)
    ap.add_argument("--patches", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    g, _ = planted_partition_graph(args.nodes, args.patches, 10, mixing=0.1, seed=0)
    print(f"graph: n={g.n} m={g.m}")
    mods = [("python", _kernels_py)] + ([("cython", _kernels)] if _kernels else [])
    results = {}
    for name, mod in mods:
        tf, assign = bench_fennel(mod, g, args.patches, args.repeat)
        tb, front = bench_frontier(mod, g, args.repeat)
        results[name] = (tf, tb, assign, front)
        print(f"{name:>7}: fennel {tf * 1e3:9.2f} ms   frontier {tb * 1e3:8.3f} ms")
    if "cython" in results:
        py, cy = results["python"], results["cython"]
        same = np.array_equal(py[2], cy[2]) and np.array_equal(py[3], cy[3])
        print(f"speedup: fennel {py[0] / cy[0]:.1f}x   frontier {py[1] / cy[1]:.1f}x   "
              f"outputs identical: {same}")
    else:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
