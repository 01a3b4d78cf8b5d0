"""Spectral projected gradient for smooth objectives over a convex set."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class SpgResult:
    x: np.ndarray
    f: float
    pg_norm: float
    iters: int
    converged: bool


def spg_minimize(f_and_g: Callable, x0, project: Callable, max_iter: int = 2000, tol: float = 1e-8,
                 memory: int = 10) -> SpgResult:
    """Minimize with Barzilai-Borwein steps and a nonmonotone Armijo search.

    Convergence is declared when the projected-gradient step
    ``||P(x - g) - x||`` falls below ``tol``.
    """
    x = project(np.asarray(x0, dtype=float))
    f, g = f_and_g(x)
    hist = [f]
    alpha = 1.0
    pg = np.linalg.norm(project(x - g) - x)
    it = 0
    while it < max_iter and pg > tol:
        it += 1
        d = project(x - alpha * g) - x
        gd = float(g @ d)
        fref = max(hist[-memory:])
        lam = 1.0
        while True:
            xn = x + lam * d
            fn, gn = f_and_g(xn)
            if fn <= fref + 1e-4 * lam * gd or lam < 1e-12:
                break
            lam *= 0.5
        s, yv = xn - x, gn - g
        sy = float(s @ yv)
        alpha = float(s @ s) / sy if sy > 1e-300 else 1e10
        alpha = min(max(alpha, 1e-10), 1e10)
        x, f, g = xn, fn, gn
        hist.append(f)
        pg = np.linalg.norm(project(x - g) - x)
    return SpgResult(x, float(f), float(pg), it, bool(pg <= tol))
