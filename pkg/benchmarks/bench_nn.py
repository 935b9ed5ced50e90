#!/usr/bin/env python3
"""Benchmark the nearest-neighbor kernels: compiled extension vs the
blocked NumPy fallback.

Times single-NN scans at latent-space width (20) and feature-space width
(122) on synthetic data, verifies both backends agree, and prints a table.

    python benchmarks/bench_nn.py                    # quick defaults
    python benchmarks/bench_nn.py --n 125973 --q 22544   # dataset scale
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from latentids import _nnsearch_np

try:
    from latentids import _nnsearch

    BACKENDS = [("compiled", _nnsearch.nearest_neighbor)]
except ImportError:
    print("note: compiled extension not built; benchmarking the fallback only")
    BACKENDS = []
BACKENDS.append(("numpy", _nnsearch_np.nearest_neighbor))


def bench(fn, ref, queries, repeats):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn(ref, queries)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=50_000, help="reference rows")
    parser.add_argument("--q", type=int, default=2_000, help="query rows")
    parser.add_argument(
        "--dims", type=int, nargs="+", default=[20, 122],
        help="dimensionalities to benchmark",
    )
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"n={args.n} refs, q={args.q} queries, best of {args.repeats} runs\n")
    header = f"{'dim':>5}  " + "".join(f"{name:>12}  " for name, _ in BACKENDS)
    print(header + ("speedup" if len(BACKENDS) == 2 else ""))

    for dim in args.dims:
        ref = rng.normal(size=(args.n, dim))
        queries = rng.normal(size=(args.q, dim))
        times = []
        results = []
        for _, fn in BACKENDS:
            seconds, result = bench(fn, ref, queries, args.repeats)
            times.append(seconds)
            results.append(result)
        if len(results) == 2:
            assert np.array_equal(results[0][0], results[1][0]), "index mismatch"
            np.testing.assert_allclose(
                results[0][1], results[1][1], rtol=1e-9, atol=1e-12
            )
        row = f"{dim:>5}  " + "".join(f"{t:>11.3f}s  " for t in times)
        if len(times) == 2:
            row += f"{times[1] / times[0]:>6.2f}x"
        print(row)
    print("\n(backends verified to return identical neighbors)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
