"""Micro-benchmark: numba kernels vs their pure-numpy twins.

Times the four per-step kernels on a few token-matrix shapes and prints
per-call latency for both backends plus the speedup ratio. Run from the
repo root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --shapes 96x8,1024x64 --repeats 7
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from worldcache import kernels


def best_time(fn, repeats: int) -> float:
    """Best-of-N per-call seconds, loop count adapted to the clock."""
    number = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        elapsed = time.perf_counter() - t0
        if elapsed > 0.02:
            break
        number *= 4
    best = elapsed / number
    for _ in range(repeats - 1):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        best = min(best, (time.perf_counter() - t0) / number)
    return best


def make_cases(n: int, d: int, rng):
    y_star = rng.normal(size=(n, d))
    v_latest = rng.normal(size=(n, d))
    v_prev = rng.normal(size=(n, d))
    y_prev = rng.normal(size=(n, d))
    kappa = np.abs(rng.normal(size=n))
    labels = rng.integers(0, 3, size=n).astype(np.int8)
    return [
        ("row_norms", (y_star,)),
        ("curvature_rows", (v_latest, v_prev, -1.0, 1e-8)),
        ("blend_rows", (y_star, v_latest, v_prev, labels, -1.0, 0.35,
                        kernels.MODE_BY_LABEL)),
        ("drift_mean", (y_star, y_prev, kappa, labels)),
    ]


def fmt(seconds: float) -> str:
    if seconds < 1e-6:
        return f"{seconds * 1e9:7.1f} ns"
    if seconds < 1e-3:
        return f"{seconds * 1e6:7.1f} us"
    return f"{seconds * 1e3:7.2f} ms"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--shapes", default="96x8,256x16,1024x64,4096x64",
                        help="comma list of NxD token-matrix shapes")
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats per cell (best is kept)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    shapes = []
    for item in args.shapes.split(","):
        n, _, d = item.strip().partition("x")
        shapes.append((int(n), int(d)))

    if not kernels.HAS_NUMBA:
        print("numba not importable; timing the numpy backend only")
    else:
        kernels.warm_up()  # exclude JIT compilation from the timings

    rng = np.random.default_rng(args.seed)
    header = f"{'kernel':<16} {'shape':>9} {'numpy':>11}"
    if kernels.HAS_NUMBA:
        header += f" {'numba':>11} {'speedup':>8}"
    print(f"active backend: {kernels.BACKEND}")
    print(header)
    print("-" * len(header))

    for n, d in shapes:
        for name, inputs in make_cases(n, d, rng):
            np_fn = getattr(kernels, f"_{name}_np")
            t_np = best_time(lambda: np_fn(*inputs), args.repeats)
            line = f"{name:<16} {f'{n}x{d}':>9} {fmt(t_np):>11}"
            if kernels.HAS_NUMBA:
                nb_fn = getattr(kernels, f"_{name}_nb")
                nb_fn(*inputs)  # make sure this signature is compiled
                t_nb = best_time(lambda: nb_fn(*inputs), args.repeats)
                line += f" {fmt(t_nb):>11} {t_np / t_nb:>7.1f}x"
            print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
