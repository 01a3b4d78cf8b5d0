import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sharpen.errors import CapacityError, DomainError, ValidationError
from sharpen.models import (AutoregressiveTabularModel, LinearSoftmaxModel, PromptDistribution, PromptSpace,
                            ResponseSpace, as_tabular, log_softmax, logprob, sample, softmax_eval)
from sharpen.rng import RngStream

from conftest import sigma3, tab


def ar_ab():
    # pi_1(a) = 0.5, pi_2(b | a) = 0.5
    P = PromptSpace(["_"])
    c1 = [[[0.5, 0.5]]]
    c2 = [[[0.5, 0.5], [0.5, 0.5]]]
    return AutoregressiveTabularModel(P, ["a", "b"], [c1, c2])


def test_logprob_tabular_half():
    assert logprob(tab([0.5, 0.5]), "x0", "y0") == pytest.approx(-0.693147, abs=1e-6)


def test_logprob_deterministic_support_point():
    assert logprob(tab([0.0, 1.0]), "x0", "y1") == 0.0


def test_logprob_zero_mass_is_neg_inf():
    assert logprob(tab([0.0, 1.0]), "x0", "y0") == -math.inf


def test_logprob_ar_product_rule():
    assert logprob(ar_ab(), "_", ("a", "b")) == pytest.approx(-1.386294, abs=1e-6)


def test_unknown_prompt_and_response_raise():
    m = tab([0.5, 0.5])
    with pytest.raises(DomainError):
        m.logprob("nope", "y0")
    with pytest.raises(DomainError):
        m.logprob("x0", "nope")
    with pytest.raises(DomainError):
        ar_ab().logprob("_", ("a",))


def test_rows_must_sum_to_one():
    with pytest.raises(ValidationError):
        tab([0.5, 0.6])
    with pytest.raises(ValidationError):
        tab([1.2, -0.2])


def test_sample_deterministic():
    m = tab([0.0, 1.0, 0.0])
    r = RngStream(0)
    assert all(sample(m, "x0", r) == "y1" for _ in range(50))


def test_sample_frequency_three_sigma():
    m = tab([0.6, 0.4])
    r = RngStream(1)
    n = 100_000
    hits = sum(m.sample_index(0, r) == 0 for _ in range(n))
    assert abs(hits / n - 0.6) <= 0.006


def test_sample_is_reproducible():
    m = ar_ab()
    a = [sample(m, "_", RngStream(7)) for _ in range(3)]
    b = [sample(m, "_", RngStream(7)) for _ in range(3)]
    assert a == b


def test_softmax_two_responses():
    P, Y = PromptSpace(["x"]), ResponseSpace(["y0", "y1"])
    f = [np.array([[[1.0], [-1.0]]])]
    m = LinearSoftmaxModel(P, Y, f, [np.zeros(1)], bound=1.0)
    np.testing.assert_allclose(softmax_eval(m, "x"), [0.5, 0.5])
    m = m.with_theta([np.array([math.log(3) / 2])])
    np.testing.assert_allclose(softmax_eval(m, "x"), [0.75, 0.25], rtol=1e-12)


def test_softmax_norm_bound_enforced():
    P, Y = PromptSpace(["x"]), ResponseSpace(["y0", "y1"])
    f = [np.array([[[1.0], [-1.0]]])]
    with pytest.raises(ValidationError):
        LinearSoftmaxModel(P, Y, f, [np.array([2.0])], bound=1.0)


def _layered(theta_scale, V=3, H=2, d=2, seed=0):
    r = RngStream(seed)
    P = PromptSpace(["x"])
    Y = ResponseSpace.sequences(list(range(V)), H)
    feats = []
    for h in range(H):
        f = r.normal(size=(1, V ** (h + 1), d))
        feats.append(f / np.maximum(np.linalg.norm(f, axis=-1, keepdims=True), 1))
    theta = [theta_scale * r.normal(size=d) for _ in range(H)]
    return LinearSoftmaxModel(P, Y, feats, theta, bound=100.0)


def test_multilayer_zero_theta_is_uniform():
    m = _layered(0.0)
    np.testing.assert_allclose(m.row("x"), np.full(9, 1 / 9))


def test_multilayer_zero_theta_samples_uniform():
    m = _layered(0.0)
    r = RngStream(2)
    n = 20_000
    counts = np.bincount([m.sample_index(0, r) for _ in range(n)], minlength=9) / n
    assert np.all(np.abs(counts - 1 / 9) <= sigma3(1 / 9, n))


def test_multilayer_logprob_matches_table():
    m = _layered(1.5, seed=3)
    lt = m.log_table()[0]
    for i, y in enumerate(m.responses.items):
        assert m.logprob("x", y) == pytest.approx(lt[i], abs=1e-12)
    assert np.exp(lt).sum() == pytest.approx(1.0, abs=1e-12)


def test_relative_log_table_preserves_differences():
    m = _layered(2.0, seed=4)
    a, b = m.log_table()[0], m.relative_log_table()[0]
    np.testing.assert_allclose(a - a.max(), b - b.max(), atol=1e-12)


def test_grad_logprob_matches_finite_differences():
    m = _layered(1.0, seed=5)
    yi = 4
    g = m.grad_logprob(0, yi)
    h = 1e-6
    for layer in range(2):
        for k in range(2):
            tp = [t.copy() for t in m.theta]
            tm = [t.copy() for t in m.theta]
            tp[layer][k] += h
            tm[layer][k] -= h
            fd = (m.with_theta(tp).log_table()[0, yi] - m.with_theta(tm).log_table()[0, yi]) / (2 * h)
            assert g[layer][k] == pytest.approx(fd, abs=1e-7)


def test_sequence_space_indexing_roundtrip():
    Y = ResponseSpace.sequences("abc", 3)
    for i in range(Y.size):
        assert Y.index(Y.item(i)) == i
    assert Y.items[0] == ("a", "a", "a")


def test_enumeration_cap():
    Y = ResponseSpace.sequences(list(range(100)), 5)
    with pytest.raises(CapacityError):
        Y.items


def test_prompt_distribution_validation():
    P = PromptSpace(["a", "b"])
    with pytest.raises((DomainError, ValidationError)):
        PromptDistribution(P, [0.5, 0.6])
    mu = PromptDistribution.point_mass(P, "b")
    assert mu.sample(RngStream(0)) == "b"


def test_prompt_distribution_frequencies():
    mu = PromptDistribution.uniform(PromptSpace(["x0", "x1"]))
    r = RngStream(3)
    n = 10_000
    f = sum(mu.sample(r) == "x0" for _ in range(n)) / n
    assert 0.485 <= f <= 0.515


def test_as_tabular_roundtrip():
    m = ar_ab()
    t = as_tabular(m)
    np.testing.assert_allclose(t.prob_table(), m.prob_table())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=12))
def test_log_softmax_normalizes(v):
    ls = log_softmax(np.array(v))
    assert np.exp(ls).sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(ls <= 0)


def test_log_softmax_keeps_tiny_gaps():
    # a gap of 1e-14 between logits must survive normalization
    v = np.array([40.0, 40.0 - 1e-14, 0.0])
    ls = log_softmax(v)
    assert ls[0] > ls[1]
