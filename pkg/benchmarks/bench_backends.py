#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

The workload mirrors one calibration grid point: a block of simulated
thinning chains, the pairwise contrast table, and the sup statistic swept
over a threshold grid.  Run after building the extension:

    python benchmarks/bench_backends.py
"""

import math
import time

import numpy as np

from adahaar._kernels import numpy_impl

try:
    from adahaar._kernels import _core as compiled
except ImportError:
    compiled = None


def make_workload(rows, levels, n, seed):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    V = np.empty((rows, levels), dtype=np.int64)
    V[:, 0] = rng.binomial(n, 0.4, size=rows)
    for l in range(1, levels):
        V[:, l] = rng.binomial(V[:, l - 1], 0.5)
    lv = np.arange(levels)
    F = np.ascontiguousarray(np.ldexp(V.astype(np.float64), lv[None, :]) / n)
    root = np.sqrt(np.ldexp(float(n), -lv))
    w = np.sqrt(np.ldexp(float(n), -lv) / math.log(n))
    sqrtF = np.sqrt(F)
    inv_s = np.zeros_like(sqrtF)
    np.divide(1.0, sqrtF, out=inv_s, where=F > 0)
    return F, root, w, sqrtF, inv_s


def bench(impl, F, root, w, sqrtF, inv_s, zetas, repeat=5):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        maxstat = impl.pair_maxstat(F, root)
        for z in zetas:
            impl.t_stats(F, sqrtF, inv_s, maxstat, w, z)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    zetas = np.geomspace(0.3, 30.0, 64)
    print(f"{'rows':>8} {'levels':>7} {'numpy':>12} {'compiled':>12} {'speedup':>8}")
    for rows, levels, n in ((8192, 5, 1024), (8192, 10, 65536), (65536, 5, 1024)):
        work = make_workload(rows, levels, n, seed=1)
        t_np = bench(numpy_impl, *work, zetas)
        if compiled is None:
            print(f"{rows:>8} {levels:>7} {t_np * 1e3:>10.1f}ms {'n/a':>12} {'n/a':>8}")
            continue
        t_c = bench(compiled, *work, zetas)
        out_np = numpy_impl.t_stats(work[0], work[3], work[4],
                                    numpy_impl.pair_maxstat(work[0], work[1]),
                                    work[2], float(zetas[7]))
        out_c = compiled.t_stats(work[0], work[3], work[4],
                                 compiled.pair_maxstat(work[0], work[1]),
                                 work[2], float(zetas[7]))
        assert np.array_equal(out_np, out_c), "backends disagree"
        print(f"{rows:>8} {levels:>7} {t_np * 1e3:>10.1f}ms {t_c * 1e3:>10.1f}ms "
              f"{t_np / t_c:>7.1f}x")
    if compiled is None:
        print("compiled extension not available; showing numpy only")


if __name__ == "__main__":
    main()
