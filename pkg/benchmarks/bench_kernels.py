"""Compiled vs pure-Python Monte Carlo kernels on identical uniforms.

    python3 benchmarks/bench_kernels.py --repeat 5

Prints one CSV row per (kernel, backend) with the best wall time and checks
that both backends return identical arrays.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from sharpen import kernels
from sharpen.metrics import prob_levels
from sharpen.rng import RngStream


def _inputs(rng: RngStream, k: int, trials: int, N: int, buf: int):
    p = rng.dirichlet(np.ones(k))
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    level = prob_levels(np.log(p))
    return {
        "draw_categorical": (cdf, rng.random(trials * N)),
        "bon_select": (cdf, level, rng.random((trials, N))),
        "adaptive_stop": (cdf, p, level, 2.0, rng.random((trials, buf))),
    }


def _best(fn, args, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="kernel backend benchmark")
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--trials", type=int, default=100_000)
    ap.add_argument("--N", type=int, default=20)
    ap.add_argument("--buffer", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args(argv)
    if not kernels.HAVE_COMPILED:
        print("compiled kernels not built; only the python backend is available")
    inputs = _inputs(RngStream(a.seed), a.k, a.trials, a.N, a.buffer)
    backends = ["python"] + (["compiled"] if kernels.HAVE_COMPILED else [])
    print("kernel,backend,seconds,speedup")
    ok = True
    for name, args in inputs.items():
        times, outs = {}, {}
        for b in backends:
            kernels.use_backend(b)
            times[b], outs[b] = _best(getattr(kernels, name), args, a.repeat)
        for b in backends:
            print(f"{name},{b},{times[b]:.4f},{times['python'] / times[b]:.1f}")
        if len(backends) == 2:
            x, y = outs["python"], outs["compiled"]
            same = all(np.array_equal(u, v) for u, v in zip(x, y)) if isinstance(x, tuple) else np.array_equal(x, y)
            ok &= bool(same)
    kernels.use_backend("auto")
    print("backends agree" if ok else "BACKENDS DISAGREE")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
