"""Backend selection for the Monte Carlo kernels.

The compiled extension is used when it was built; otherwise (or when
``SHARPEN_BACKEND=python``) the numpy implementations are used. Both consume
caller-supplied uniforms, so results are identical across backends.
"""
import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

HAVE_COMPILED = _ckernels is not None


def _pick(name):
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _ckernels is None:
            raise ImportError("compiled kernels are not available; rebuild with Cython")
        return _ckernels
    return _ckernels if _ckernels is not None else _pykernels


_impl = _pick(os.environ.get("SHARPEN_BACKEND", "auto"))


def backend() -> str:
    return "compiled" if _impl is _ckernels and _ckernels is not None else "python"


def use_backend(name: str) -> None:
    """Switch implementation at runtime: ``"python"``, ``"compiled"`` or ``"auto"``."""
    global _impl
    _impl = _pick(name)


def draw_categorical(cdf, u):
    return _impl.draw_categorical(np.ascontiguousarray(cdf, float), np.ascontiguousarray(u, float))


def bon_select(cdf, level, u):
    """Best-of-N over rows of uniforms; first-drawn wins among equal ``level``."""
    return _impl.bon_select(np.ascontiguousarray(cdf, float), np.ascontiguousarray(level, np.int64),
                            np.ascontiguousarray(u, float))


def adaptive_stop(cdf, prob, level, mu, u):
    """Adaptive stopping per row; ``n_used == -1`` marks rows that hit the buffer end."""
    return _impl.adaptive_stop(np.ascontiguousarray(cdf, float), np.ascontiguousarray(prob, float),
                               np.ascontiguousarray(level, np.int64), float(mu),
                               np.ascontiguousarray(u, float))
