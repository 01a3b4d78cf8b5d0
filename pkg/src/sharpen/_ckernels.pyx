# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Monte Carlo kernels. Semantics mirror ``_pykernels`` exactly."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _invcdf(const double[::1] cdf, double u) noexcept nogil:
    # first index with cdf[i] > u
    cdef Py_ssize_t lo = 0, hi = cdf.shape[0] - 1, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if cdf[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


def draw_categorical(const double[::1] cdf, const double[::1] u):
    cdef Py_ssize_t n = u.shape[0], i
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _invcdf(cdf, u[i])
    return out


def bon_select(const double[::1] cdf, const cnp.int64_t[::1] level, const double[:, ::1] u):
    cdef Py_ssize_t trials = u.shape[0], N = u.shape[1], t, j, y, best
    cdef cnp.int64_t best_level
    out = np.empty(trials, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    with nogil:
        for t in range(trials):
            best = _invcdf(cdf, u[t, 0])
            best_level = level[best]
            for j in range(1, N):
                y = _invcdf(cdf, u[t, j])
                if level[y] > best_level:
                    best = y
                    best_level = level[y]
            o[t] = best
    return out


def adaptive_stop(const double[::1] cdf, const double[::1] prob, const cnp.int64_t[::1] level,
                  double mu, const double[:, ::1] u):
    cdef Py_ssize_t trials = u.shape[0], L = u.shape[1], t, k, y, best
    cdef cnp.int64_t best_level
    cdef double maxp, thresh = mu * (1.0 - 1e-12)
    n_used = np.full(trials, -1, dtype=np.int64)
    selected = np.empty(trials, dtype=np.int64)
    cdef cnp.int64_t[::1] nu = n_used
    cdef cnp.int64_t[::1] sel = selected
    with nogil:
        for t in range(trials):
            best = _invcdf(cdf, u[t, 0])
            best_level = level[best]
            maxp = prob[best]
            k = 1
            while True:
                if k * maxp >= thresh:
                    nu[t] = k
                    break
                if k == L:
                    break
                y = _invcdf(cdf, u[t, k])
                k += 1
                if level[y] > best_level:
                    best = y
                    best_level = level[y]
                if prob[y] > maxp:
                    maxp = prob[y]
            sel[t] = best
    return n_used, selected
