import math

import numpy as np
import pytest

from sharpen.decode import exact_sequence_argmax, greedy_decode
from sharpen.errors import DomainError
from sharpen.instances import (brute_force_maxcut, lower_bound_family, lower_bound_rows, maxcut_hardness, packing,
                               random_tabular_instance, representational_example, row_margin, softmax_separation)
from sharpen.metrics import coverage_profile
from sharpen.rng import RngStream
from sharpen.sft import bon_row


def test_lower_bound_rows():
    P = lower_bound_rows(4, 0.5)
    for i in range(1, 5):
        assert P[i, i] == pytest.approx(0.5)
        others = [P[i, j] for j in range(1, 5) if j != i]
        np.testing.assert_allclose(others, 1 / 6)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_lower_bound_coverage():
    for dm in (0.25, 0.5, 0.75):
        inst = lower_bound_family(2, 4, dm, gamma=0.5)
        assert inst.truth["c_cov_gamma"] == pytest.approx((1 - dm) + 2 * dm, abs=1e-12)
        assert inst.truth["class_size"] == 16


def test_lower_bound_assignment_validation():
    with pytest.raises(DomainError):
        lower_bound_family(2, 4, 0.5, assignment=[1, 5])
    with pytest.raises(DomainError):
        lower_bound_rows(1)


def test_packing_threshold():
    v = packing(8, 64, RngStream(0))
    G = v @ v.T
    np.fill_diagonal(G, -1)
    assert G.max() <= 0.9
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0)


def test_separation_instance_margin_and_coverage():
    inst = softmax_separation(8, 64, rng=RngStream(8))
    row = inst.base.row("x0")
    star = inst.params["star"]
    others = np.delete(row, star)
    assert np.all(row[star] / others >= math.exp(0.1) * (1 - 1e-12))
    assert inst.truth["c_cov"] >= 20
    assert bon_row(row, 16)[star] < 0.9


def test_maxcut_triangle():
    inst, dec = maxcut_hardness(3, [(0, 1), (1, 2), (0, 2)])
    seqs = exact_sequence_argmax(inst.base, "_", tol=0.0)
    assert seqs and all(s[-2:] == (1, 1) for s in seqs)
    assert all(dec(s) == 2 == brute_force_maxcut(3, [(0, 1), (1, 2), (0, 2)]) for s in seqs)


def test_maxcut_single_edge():
    inst, dec = maxcut_hardness(2, [(0, 1)])
    seqs = exact_sequence_argmax(inst.base, "_", tol=0.0)
    assert all(dec(s) == 1 for s in seqs)


def test_maxcut_needs_odd_edges():
    with pytest.raises(DomainError):
        maxcut_hardness(3, [(0, 1), (1, 2)])


def test_representational_argmax_unique():
    inst = representational_example(100)
    assert exact_sequence_argmax(inst.base, "_") == [(2, 1)]


def test_representational_ceiling_random_theta():
    inst = representational_example(20)
    r = RngStream(1)
    i21 = inst.responses.index((2, 1))
    for _ in range(200):
        theta = [r.normal(size=2) * 3 for _ in range(2)]
        theta = [t / max(1, np.linalg.norm(t) / inst.params["B"]) for t in theta]
        m = inst.model_class.model(theta)
        first = np.exp(m.step_log_table(0)[0, 0])
        assert first[0] == first[1]  # the first-step features of tokens 1 and 2 collide
        assert first[1] <= 0.5
        assert m.prob_table()[0, i21] <= first[1] * (1 + 1e-12)


def test_representational_greedy_tie_break():
    # tokens 1 and 2 tie at step one; greedy takes the lower index
    inst = representational_example(100)
    assert greedy_decode(inst.base, "_")[0] == 1


def test_random_tabular_ranges():
    inst = random_tabular_instance(5, 6, RngStream(3), margin_range=(0.5, 2.0))
    prof = coverage_profile(inst.base, inst.mu)
    assert 0.5 <= prof.margin_max <= 2.0
    for row in inst.base.prob_table():
        assert 0.5 <= row_margin(row) <= 2.0


def test_random_tabular_near_deterministic():
    inst = random_tabular_instance(3, 2, RngStream(4), c_cov_range=(1.0, 1.1))
    assert inst.truth["c_cov"] <= 1.1
    assert np.all(inst.base.prob_table().max(axis=1) >= 1 / 1.1)


def test_random_tabular_deterministic_in_seed():
    a = random_tabular_instance(4, 5, RngStream(9))
    b = random_tabular_instance(4, 5, RngStream(9))
    np.testing.assert_array_equal(a.base.prob_table(), b.base.prob_table())


def test_random_tabular_class_realizable():
    inst = random_tabular_instance(3, 4, RngStream(2))
    for i, rows in enumerate(inst.model_class.rows):
        assert any(np.array_equal(r, inst.base.prob_table()[i]) for r in rows)


def test_random_tabular_infeasible():
    with pytest.raises(DomainError):
        random_tabular_instance(2, 3, RngStream(0), c_cov_range=(4.0, 5.0))
