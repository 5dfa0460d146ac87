"""Time the compiled assignment kernel against the pure-Python fallback.

Run from the repository root:

    python3 benchmarks/bench_assign.py [--sizes 10,30,60,100] [--repeats 20]

Both backends run on identical inputs inside one process: the pure solver is
imported directly from sgset._assign_py, the compiled one through the normal
sgset.assign entry point (which falls back to pure if the extension is
missing, in which case the comparison is a no-op and says so).
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from sgset import assign
from sgset._assign_py import solve_rectangular as solve_pure


def bench(solver, matrices: list[np.ndarray], repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for c in matrices:
            solver(c)
        best = min(best, time.perf_counter() - start)
    return best


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="10,30,60,100",
                        help="comma-separated square matrix sizes")
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--batch", type=int, default=16,
                        help="matrices per size per timing pass")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    sizes = [int(s) for s in args.sizes.split(",")]
    gen = np.random.default_rng(args.seed)

    if assign.BACKEND != "compiled":
        print("compiled extension not importable; benchmarking the pure "
              "backend against itself (build the package to compare).")

    print(f"backend under test: {assign.BACKEND}")
    print(f"{'size':>6} {'pure (ms)':>12} {assign.BACKEND + ' (ms)':>14} "
          f"{'speedup':>9}")
    for n in sizes:
        matrices = [gen.standard_normal((n, n)) for _ in range(args.batch)]
        # agreement check before timing: same assignment, same total
        for c in matrices:
            rp, tp = solve_pure(np.asarray(c, dtype=np.float64))
            rb, tb = assign.solve(c)
            if not np.array_equal(rp, rb) or abs(tp - tb) > 1e-9 * max(1, abs(tp)):
                print(f"backends disagree on a {n}x{n} matrix", file=sys.stderr)
                return 1
        t_pure = bench(lambda c: solve_pure(np.asarray(c, dtype=np.float64)),
                       matrices, args.repeats)
        t_main = bench(assign.solve, matrices, args.repeats)
        print(f"{n:>6} {1e3 * t_pure:>12.3f} {1e3 * t_main:>14.3f} "
              f"{t_pure / t_main:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
