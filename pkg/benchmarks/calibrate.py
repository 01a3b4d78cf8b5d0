"""Sweeps behind the frozen constants in ``sharpen.calibration``.

Each sweep uses a master seed different from the acceptance suites, so the
suites check the frozen values on fresh draws.

    python3 benchmarks/calibrate.py sft --grid 0.25 0.5 1.0
    python3 benchmarks/calibrate.py sec
    python3 benchmarks/calibrate.py xpo --alphas 0 1e-3 1e-2
"""
from __future__ import annotations

import argparse
import math

import numpy as np

from sharpen.harness.verify import suite_sft_trend, suite_xpo_separation
from sharpen.models import PromptDistribution, PromptSpace, ResponseSpace
from sharpen.rlhf import sec_along_sequence
from sharpen.rng import RngStream
from sharpen.sft import LinearSoftmaxClass
import sharpen.calibration as cal


def sweep_sft(grid, seeds: int, seed: int) -> None:
    print("c,tabular_successes,lower_bound_full,lower_bound_quarter,median_N")
    for c in grid:
        v = suite_sft_trend(seed=seed, seeds=seeds, c=c).values
        print(f"{c},{v['tabular_successes']},{v['lower_bound_successes_full_N']},"
              f"{v['lower_bound_successes_quarter_N']},{v['tabular_median_N']}")


def _ball(r: RngStream, d: int, B: float) -> np.ndarray:
    v = r.normal(size=d) * B
    return v / max(1.0, np.linalg.norm(v) / B)


def sec_ratios(n_seq: int, seed: int, d: int = 4, T: int = 50, n_prompts: int = 3, n_resp: int = 12,
               B: float = 2.0, beta: float = 0.5) -> list[float]:
    """SEC / (d ln(T+1)) over random and random-walk policy sequences in a linear-softmax class."""
    out = []
    for s in range(n_seq):
        r = RngStream(seed, s)
        P = PromptSpace([f"x{i}" for i in range(n_prompts)])
        Y = ResponseSpace([f"y{j}" for j in range(n_resp)])
        f = r.normal(size=(n_prompts, n_resp, d))
        f /= np.maximum(np.linalg.norm(f, axis=-1, keepdims=True), 1.0)
        cls = LinearSoftmaxClass(P, Y, [f], B)
        base = cls.model([_ball(r, d, B)])
        mu = PromptDistribution(P, np.full(n_prompts, 1 / n_prompts))
        r_max = float(np.abs(base.log_table()).max())
        lam = 4 * beta ** 2 * B ** 2 + r_max ** 2
        pols = [cls.model([_ball(r, d, B)]) for _ in range(T)]
        out.append(sec_along_sequence(pols, base, None, beta, lam, mu) / (d * math.log(T + 1)))
        th, walk = _ball(r, d, B), []
        for _ in range(T):
            th = th + 0.3 * r.normal(size=d)
            th /= max(1.0, np.linalg.norm(th) / B)
            walk.append(cls.model([th]))
        out.append(sec_along_sequence(walk, base, None, beta, lam, mu) / (d * math.log(T + 1)))
    return out


def sweep_xpo(alphas, runs: int, seed: int, T: int) -> None:
    saved = cal.XPO_ALPHA_OVER_BETA_SQ
    print("alpha_over_beta_sq,successes,min_mass")
    try:
        for a in alphas:
            cal.XPO_ALPHA_OVER_BETA_SQ = a
            v = suite_xpo_separation(seed=seed, runs=runs, T=T).values
            print(f"{a},{v['xpo_successes']},{v['min_xpo_mass']:.4f}")
    finally:
        cal.XPO_ALPHA_OVER_BETA_SQ = saved


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="what", required=True)
    p = sub.add_parser("sft")
    p.add_argument("--grid", type=float, nargs="+", default=[0.125, 0.25, 0.5, 1.0])
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--seed", type=int, default=1005)
    p = sub.add_parser("sec")
    p.add_argument("--sequences", type=int, default=30)
    p.add_argument("--seed", type=int, default=1013)
    p = sub.add_parser("xpo")
    p.add_argument("--alphas", type=float, nargs="+", default=[0.0, 1e-3, 1e-2])
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--T", type=int, default=cal.XPO_T)
    p.add_argument("--seed", type=int, default=1008)
    a = ap.parse_args(argv)
    if a.what == "sft":
        sweep_sft(a.grid, a.seeds, a.seed)
    elif a.what == "sec":
        v = sec_ratios(a.sequences, a.seed)
        print(f"max SEC/(d ln(T+1)) = {max(v):.4f}, median = {float(np.median(v)):.4f}, frozen c = {cal.SEC_C}")
    else:
        sweep_xpo(a.alphas, a.runs, a.seed, a.T)


if __name__ == "__main__":
    main()
