"""Numpy reference implementations of the Monte Carlo kernels."""
import numpy as np


def draw_categorical(cdf, u):
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(cdf) - 1).astype(np.int64)


def bon_select(cdf, level, u):
    draws = draw_categorical(cdf, u)
    j = np.argmax(level[draws], axis=1)
    return draws[np.arange(len(draws)), j]


def adaptive_stop(cdf, prob, level, mu, u):
    trials, L = u.shape
    draws = draw_categorical(cdf, u)
    runmax = np.maximum.accumulate(prob[draws], axis=1)
    stop = np.arange(1, L + 1) * runmax >= mu * (1.0 - 1e-12)
    stopped = stop.any(axis=1)
    n_used = np.where(stopped, np.argmax(stop, axis=1) + 1, -1)
    upto = np.where(stopped, n_used, L)
    lv = np.where(np.arange(L)[None, :] < upto[:, None], level[draws], np.iinfo(np.int64).min)
    j = np.argmax(lv, axis=1)
    return n_used.astype(np.int64), draws[np.arange(trials), j]
