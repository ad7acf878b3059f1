"""Timing comparison of the compiled kernels against the numpy fallback.

Runs each hot kernel on a representative workload with both backends and
prints a table of best-of-N wall times.  The compiled column is skipped when
the extension is not built.

    python3 benchmarks/bench_kernels.py [--repeats N] [--seed S]
"""

import argparse
import time

import numpy as np

from voxcor._kernels import _numpy as knp

try:
    from voxcor._kernels import _core as kcy
except ImportError:
    kcy = None


def best_of(fn, repeats):
    """Minimum wall time over `repeats` calls, in seconds."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def make_workloads(rng):
    vol = rng.standard_normal((96, 96, 96)).astype(np.float32)
    src = rng.standard_normal((64, 64, 64, 8)).astype(np.float32)
    sigma = np.array([1.1, 0.95, 1.0])
    delta = np.array([0.5, -1.25, 2.0])
    bg = rng.random((96, 96, 96)) > 0.35
    sims = rng.standard_normal((4096, 2048)).astype(np.float32)
    k = 7
    # vote input must be sorted by preference, as topk_desc emits it
    order = knp.topk_desc(sims, k)
    labels = rng.integers(1, 6, order.shape).astype(np.int64)
    top_sims = np.take_along_axis(sims, order, axis=1)

    return [
        ("box_mean_3d 96^3 r=2",
         lambda m: m.box_mean_3d(vol, 2)),
        ("resample 64^3x8 trilinear",
         lambda m: m.resample_affine(src, sigma, delta, False)),
        ("resample 64^3x8 nearest",
         lambda m: m.resample_affine(src, sigma, delta, True)),
        ("flood_fill_6 96^3",
         lambda m: m.flood_fill_6(bg)),
        ("topk_desc 4096x2048 k=7",
         lambda m: m.topk_desc(sims, k)),
        ("vote_majority 4096x7",
         lambda m: m.vote_majority(labels, top_sims)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5,
                    help="timed calls per kernel; the best is reported")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    workloads = make_workloads(rng)

    if kcy is None:
        print("compiled extension not built; timing the numpy backend only")
    header = f"{'kernel':<28}{'numpy':>13}{'cython':>13}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, call in workloads:
        call(knp)  # warm caches before timing
        t_np = best_of(lambda: call(knp), args.repeats)
        if kcy is None:
            print(f"{name:<28}{t_np * 1e3:>10.2f} ms{'-':>13}{'-':>10}")
            continue
        call(kcy)
        t_cy = best_of(lambda: call(kcy), args.repeats)
        print(f"{name:<28}{t_np * 1e3:>10.2f} ms{t_cy * 1e3:>10.2f} ms"
              f"{t_np / t_cy:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
