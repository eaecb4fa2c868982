"""Time the compiled and the numpy sweeps on the default 1D problem size.

    python3 benchmarks/bench_kernels.py [--nx 201] [--nt 401] [--repeat 5]

Both paths are called directly, so the environment flag does not matter here.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mfg_carleman import kernels


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--nx", type=int, default=201)
    ap.add_argument("--nt", type=int, default=401)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kernels.HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    nx, nt = args.nx, args.nt
    h, tau, beta = 1.0 / (nx - 1), 0.3 / (nt - 1), 0.1
    x = np.linspace(0.0, 1.0, nx)
    xf = 0.5 * (x[1:] + x[:-1])
    kappa2 = (0.5 + 0.2 * np.cos(np.pi * x)) ** 2
    kappa2_f = (0.5 + 0.2 * np.cos(np.pi * xf)) ** 2
    u_T = 0.5 * np.cos(np.pi * x)
    source = 0.1 * np.outer(np.cos(2 * np.pi * x), np.ones(nt))
    p0 = 1.0 + 0.5 * np.cos(np.pi * x)

    # compile outside the timed region
    kernels.bellman_sweep_1d_jit(u_T, source, kappa2, beta, tau, h)
    u, _ = kernels.bellman_sweep_1d_jit(u_T, source, kappa2, beta, tau, h)
    kernels.fp_sweep_1d_jit(p0, u, kappa2_f, beta, tau, h)

    rows = []
    for name, jit_fn, np_fn in [
        ("bellman", lambda: kernels.bellman_sweep_1d_jit(u_T, source, kappa2, beta, tau, h),
         lambda: kernels.bellman_sweep_1d_np(u_T, source, kappa2, beta, tau, h)),
        ("fokker-planck", lambda: kernels.fp_sweep_1d_jit(p0, u, kappa2_f, beta, tau, h),
         lambda: kernels.fp_sweep_1d_np(p0, u, kappa2_f, beta, tau, h)),
    ]:
        tj, oj = _best(jit_fn, args.repeat)
        tn, on = _best(np_fn, args.repeat)
        diff = float(np.max(np.abs(oj[0] - on[0])))
        rows.append((name, tj, tn, tn / tj, diff))

    print(f"grid nx={nx} nt={nt}, best of {args.repeat}")
    print(f"{'sweep':<14}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, tj, tn, sp, diff in rows:
        print(f"{name:<14}{tj * 1e3:>12.3f}{tn * 1e3:>12.3f}{sp:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
