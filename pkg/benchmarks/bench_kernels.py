"""Time the compiled kernels against their numpy counterparts.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both variants are called in-process on identical inputs; the compiled
variant is warmed up once so that JIT compilation is not timed.  The
maximum relative difference between the two results is printed as well.
"""

import argparse
import time

import numpy as np

from shallowstat import kernels
from shallowstat._backend import HAVE_NUMBA


def _best(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def _cases(rng):
    L, ell = 110.0, 30.0
    k = rng.uniform(0.01, 0.5, 200)
    yield "overlap 200x200", lambda mod: getattr(kernels, f"overlap_{mod}")(k[:, None], k[None, :], ell, L)
    yield "sine_pair 200x200", lambda mod: getattr(kernels, f"sine_pair_{mod}")(k[:, None], k[None, :], ell, L)

    a = np.sort(rng.uniform(0.05, 50.0, 100))
    beta = np.sqrt(54.0**2 - a**2)
    u = rng.uniform(0.0, 50.0, 4000)
    b = rng.uniform(0.0, 54.0, 4000)
    w = rng.uniform(0.0, 1.0, 4000)
    yield "spectral_rows 100x4000", lambda mod: getattr(kernels, f"spectral_rows_{mod}")(
        "lorentz", a, beta, b, u, w, ell, L, 100.0)

    N, n_paths, steps = 10, 500, 50
    G = rng.uniform(0, 1e-3, (N, N))
    G = G + G.T
    np.fill_diagonal(G, 0.0)
    lam = rng.uniform(0, 1e-4, N)
    pj, pl = np.triu_indices(N, 1)
    Z = rng.standard_normal((steps, n_paths, pj.size))

    def em(mod):
        P = np.ones((n_paths, N))
        fn = kernels._em_block_numba if mod == "numba" else kernels._em_block_numpy
        fn(P, G, lam, 1.0, Z, pj, pl)
        return P

    yield f"em_block N={N} paths={n_paths} steps={steps}", em


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba disabled (SHALLOWSTAT_NO_NUMBA=1 or not installed): compiled column runs as pure Python")
    print(f"{'kernel':36s} {'numba [s]':>11s} {'numpy [s]':>11s} {'speed-up':>9s} {'max rel diff':>13s}")
    rng = np.random.default_rng(0)
    for name, fn in _cases(rng):
        tn = _best(lambda: fn("numba"), args.repeat)
        tp = _best(lambda: fn("numpy"), args.repeat)
        rn, rp = fn("numba"), fn("numpy")
        diff = np.max(np.abs(rn - rp)) / max(np.max(np.abs(rp)), 1e-300)
        print(f"{name:36s} {tn:11.4g} {tp:11.4g} {tp / tn:9.2f} {diff:13.2e}")


if __name__ == "__main__":
    main()
