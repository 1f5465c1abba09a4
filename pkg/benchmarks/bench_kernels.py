"""Time the hot kernels across the registered backends.

Run with the default environment to compare the numba kernels against the
pure-numpy fallback; with NETOUTLIER_BACKEND=numpy only the fallback is
registered and the table shows a single column. The first call of each numba
kernel is excluded from timing (compilation).

Usage:
    python benchmarks/bench_kernels.py [--reps 5] [--seed 0]
"""

import argparse
import time

import numpy as np

from netoutlier._kernels import BACKEND, IMPLEMENTATIONS


def best_of(fn, args, reps):
    fn(*args)  # warmup; also triggers JIT compilation
    best = float("inf")
    for _ in range(reps):
        tic = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - tic)
    return best


def qn_k(m):
    h = m // 2 + 1
    return h * (h - 1) // 2


def build_cases(rng):
    cases = []
    for m in (1_000, 20_000, 100_000):
        s = np.sort(rng.standard_normal(m))
        cases.append((f"kth_smallest_pairwise_diff m={m:>6}",
                      "kth_smallest_pairwise_diff", (s, qn_k(m))))
    for m, p in ((100_000, 3), (1_000_000, 10)):
        r = rng.standard_normal((m, p))
        a = np.eye(p) + 0.1
        cases.append((f"row_quadforms m={m} p={p}",
                      "row_quadforms", (r, a)))
    m, q = 200_000, 8
    a = rng.standard_normal((m, q))
    b = rng.standard_normal((m, 3))
    idx = np.sort(rng.choice(m, size=m // 2, replace=False))
    cases.append((f"subset_crossprod m={m} q={q}",
                  "subset_crossprod", (a, b, idx)))
    return cases


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=5,
                        help="timed repetitions per case (best is reported)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    backends = sorted(IMPLEMENTATIONS)
    print(f"selected backend: {BACKEND}; registered: {', '.join(backends)}")
    header = f"{'case':<42}" + "".join(f"{b + ' (ms)':>14}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, name, case_args in build_cases(rng):
        times = {b: best_of(IMPLEMENTATIONS[b][name], case_args, args.reps)
                 for b in backends}
        row = f"{label:<42}" + "".join(
            f"{times[b] * 1e3:>14.2f}" for b in backends
        )
        if len(backends) > 1:
            row += f"{times['numpy'] / times['numba']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
