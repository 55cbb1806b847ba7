"""Compare the compiled and numpy kernel backends.

Times each fused kernel on desk-sized arrays, then a full EM-BiGAMP solve
of one desk realization with either backend.

    python benchmarks/bench_kernels.py [--repeat 200]
"""

import argparse
import time

import numpy as np

from pfjcd import bigamp, kernels, pipeline
from pfjcd.channel import Scenario, simulate


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times) * 1e6, float(np.median(times)) * 1e6


def kernel_inputs(M, K, N, rng):
    c = lambda *s: rng.standard_normal(s) + 1j * rng.standard_normal(s)
    y, p_bar, s_prev = c(M, K), c(M, K), c(M, K)
    v_p_bar = rng.uniform(0.5, 2.0, (M, K))
    v_hx = rng.uniform(0.1, 1.0, (M, K))
    q = c(M, N)
    v_q = rng.uniform(0.05, 1.0, (M, N))
    return (y, p_bar, v_p_bar, v_hx, s_prev), (q, v_q)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--M", type=int, default=256)
    ap.add_argument("--K", type=int, default=100)
    ap.add_argument("--N", type=int, default=8)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    out_args, den_args = kernel_inputs(args.M, args.K, args.N, rng)
    lam = np.full(args.N, 0.05)
    gam = np.full(args.N, 20.0)
    backends = kernels.available()
    print(f"backends: {', '.join(backends)}  (active: {kernels.BACKEND})")
    print(f"arrays: M={args.M} K={args.K} N={args.N}, repeat={args.repeat}")

    rows = {}
    for name in backends:
        k = kernels.get(name)
        out = tuple(np.empty((args.M, args.K), dtype=t) for t in (complex, float) * 3)
        rows[name] = (
            best_of(lambda: k.output_channel(*out_args, 2.0, 1e-12, 1e12, out=out), args.repeat),
            best_of(lambda: k.bg_denoise(*den_args, lam, gam, 1e12), args.repeat),
        )
    print(f"{'kernel':<16}" + "".join(f"{b + ' min/med us':>26}" for b in backends))
    for i, label in enumerate(("output_channel", "bg_denoise")):
        cells = "".join(f"{rows[b][i][0]:>12.1f} / {rows[b][i][1]:>9.1f}" for b in backends)
        print(f"{label:<16}{cells}")

    scen = Scenario(M=args.M, N=args.N, K_p=16, K_d=args.K - 16, snr_db=10.0, seed=7)
    _, frames = simulate(scen)
    print("full original_df solve (one desk realization):")
    for name in backends:
        pipeline.run_original_df(frames, scen, backend=name)  # warm-up
        t0 = time.perf_counter()
        est = pipeline.run_original_df(frames, scen, backend=name)
        ms = (time.perf_counter() - t0) * 1e3
        print(f"  {name:<8} {ms:8.1f} ms  ({est.iterations} iterations)")


if __name__ == "__main__":
    main()
