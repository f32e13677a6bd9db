"""Time the compiled kernels against the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--samples N] [--repeat R]

Each kernel runs on identical inputs under both backends; the table reports
the best wall time of ``--repeat`` runs and the speed-up. The end-to-end row
runs the separation pipeline on desk-scale data with each backend selected
through the PHASESEP_PURE switch in a fresh interpreter.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from phasesep import _kernels_py
from phasesep.binning import symmetric_multisets

try:
    from phasesep import _kernels as _compiled
except ImportError:
    _compiled = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n_samples, seed=0):
    rng = np.random.default_rng(seed)
    nbins = 256
    v = rng.standard_t(5, size=(n_samples, 2))
    bins = rng.integers(0, nbins, size=n_samples)
    ms = symmetric_multisets(2)

    shape = (16, 16)
    lower, width = np.array([-2.0, -2.0]), np.array([0.25, 0.25])
    ang = rng.uniform(-0.3, 0.3, size=256)
    vecs = np.column_stack([np.cos(ang), np.sin(ang)])
    mask = np.ones(256, dtype=np.uint8)
    start = np.array([-1.9, 0.1])
    upper = lower + width * np.array(shape)

    values = rng.standard_normal((17 * 17, 2))
    nmask = np.ones(17 * 17, dtype=np.uint8)
    pts = rng.uniform(lower, upper, size=(n_samples, 2))

    return [
        ("accumulate_moments", lambda k: k.accumulate_moments(v, bins, nbins, ms)),
        ("trace_grid (x50)", lambda k: [k.trace_grid(lower, width, shape, vecs, mask, start,
                                                     1.0, 0.01, 10.0, 10_000, lower, upper)
                                        for _ in range(50)]),
        ("interp_scalar_many", lambda k: k.interp_scalar_many(lower, width, (17, 17), values,
                                                              nmask, pts)),
    ]


def end_to_end(pure, n_samples):
    code = ("import time; from phasesep import *; "
            f"s = generate_sources('ar2-noise', 2, {n_samples}, 16000.0, 7); "
            "x = mix_sources(s); t0 = time.perf_counter(); separate(x); "
            "print(time.perf_counter() - t0)")
    env = dict(os.environ, PHASESEP_PURE="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=200_000)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--skip-pipeline", action="store_true")
    args = p.parse_args(argv)
    if _compiled is None:
        print("compiled kernels are not built; only the fallback can run", file=sys.stderr)
        return 1

    print(f"{'kernel':<22}{'python [s]':>12}{'compiled [s]':>14}{'speed-up':>10}")
    for name, fn in cases(args.samples):
        tp = best_of(lambda: fn(_kernels_py), args.repeat)
        tc = best_of(lambda: fn(_compiled), args.repeat)
        print(f"{name:<22}{tp:>12.4f}{tc:>14.4f}{tp / tc:>9.1f}x")
    if not args.skip_pipeline:
        tp = end_to_end(True, args.samples)
        tc = end_to_end(False, args.samples)
        print(f"{'separate() end-to-end':<22}{tp:>12.4f}{tc:>14.4f}{tp / tc:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
