import numpy as np

from sharpen.optim import spg_minimize


def ball(r):
    def proj(v):
        n = np.linalg.norm(v)
        return v if n <= r else v * (r / n)
    return proj


def test_unconstrained_quadratic():
    A = np.diag([1.0, 10.0, 100.0])
    b = np.array([1.0, -2.0, 3.0])
    res = spg_minimize(lambda x: (0.5 * x @ A @ x - b @ x, A @ x - b), np.zeros(3), ball(1e6), tol=1e-10)
    assert res.converged
    np.testing.assert_allclose(res.x, np.linalg.solve(A, b), atol=1e-8)


def test_constrained_minimum_on_boundary():
    c = np.array([3.0, 4.0])
    res = spg_minimize(lambda x: (0.5 * np.sum((x - c) ** 2), x - c), np.zeros(2), ball(1.0), tol=1e-12)
    np.testing.assert_allclose(res.x, c / 5, atol=1e-10)


def test_iteration_cap_reports_nonconvergence():
    A = np.diag(np.logspace(0, 6, 20))
    res = spg_minimize(lambda x: (0.5 * x @ A @ x - x.sum(), A @ x - 1), np.zeros(20), ball(1e9), max_iter=3,
                       tol=1e-14)
    assert not res.converged and res.iters == 3
