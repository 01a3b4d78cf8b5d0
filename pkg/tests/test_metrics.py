import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sharpen.errors import DomainError
from sharpen.instances import lower_bound_family
from sharpen.metrics import (argmax_set, concentrability, coverage_profile, divergences, gamma_argmax_set, j_beta,
                             loss_concentrability, prob_levels, sharpness_check, tilt)
from sharpen.models import PromptDistribution, TabularModel
from sharpen.rng import RngStream

from conftest import tab, uniform_mu

row_st = st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6).map(lambda v: list(np.array(v) / np.sum(v)))


@pytest.mark.parametrize("row,expected", [
    ([0.5, 0.3, 0.2], ["y0"]),
    ([0.25] * 4, ["y0", "y1", "y2", "y3"]),
    ([0.4, 0.4, 0.2], ["y0", "y1"]),
])
def test_argmax_set(row, expected):
    assert argmax_set(tab(row), "x0") == expected


@pytest.mark.parametrize("gamma,expected", [(0.5, ["y0", "y1"]), (0.0, ["y0"]), (0.9, ["y0", "y1", "y2"])])
def test_gamma_argmax_set(gamma, expected):
    assert gamma_argmax_set(tab([0.5, 0.3, 0.2]), "x0", gamma) == expected


def test_gamma_out_of_range():
    with pytest.raises(DomainError):
        gamma_argmax_set(tab([0.5, 0.5]), "x0", 1.0)


def test_prob_levels_groups_ties():
    with np.errstate(divide="ignore"):
        lv = prob_levels(np.log(np.array([0.4, 0.2, 0.4, 0.0])))
    assert lv[0] == lv[2] and lv[1] != lv[0] and lv[3] != lv[1]


def test_sharpness_point_mass():
    base = tab([0.5, 0.3, 0.2], [0.1, 0.6, 0.3])
    cand = tab([1, 0, 0], [0, 1, 0])
    for d in (0.01, 0.5, 0.99):
        assert sharpness_check(cand, base, uniform_mu(base), d).epsilon_hat == 0.0


def test_sharpness_uniform_everything_is_argmax():
    base = tab([0.25] * 4)
    assert sharpness_check(base, base, uniform_mu(base), 0.1).epsilon_hat == 0.0


def test_sharpness_arithmetic():
    base, cand = tab([0.6, 0.4]), tab([0.7, 0.3])
    v = sharpness_check(cand, base, uniform_mu(base), 0.25)
    assert v.epsilon_hat == 1.0 and not v.passes(0.5)
    assert v.masses["x0"] == pytest.approx(0.7)


def test_sharpness_space_mismatch():
    with pytest.raises(DomainError):
        sharpness_check(tab([0.5, 0.5]), tab([0.2, 0.3, 0.5]), uniform_mu(tab([0.5, 0.5])), 0.1)


def test_coverage_single_prompt():
    base = tab([0.5, 0.25, 0.25])
    p = coverage_profile(base, uniform_mu(base))
    assert p.c_cov == pytest.approx(2.0)
    assert p.margin_max == pytest.approx(1.0)


def test_coverage_two_prompts():
    b = TabularModel.from_rows({"a": [0.5, 0.2, 0.1, 0.1, 0.1], "b": [0.25, 0.2, 0.2, 0.2, 0.15]},
                               ["p", "q", "r", "s", "t"])
    p = coverage_profile(b, PromptDistribution.uniform(b.prompts))
    assert p.c_cov == pytest.approx(0.5 * 2 + 0.5 * 4)


def test_coverage_lower_bound_family():
    inst = lower_bound_family(2, 4, 0.5, gamma=0.5)
    p = coverage_profile(inst.base, inst.mu, gamma=0.5)
    assert p.c_cov_gamma == pytest.approx(1.5, abs=1e-12)


def test_tilt_closed_form():
    t = tilt(tab([0.6, 0.4]), 1.0)
    np.testing.assert_allclose(t.row("x0"), [0.36 / 0.52, 0.16 / 0.52], rtol=1e-12)


def test_tilt_deterministic_and_large_beta():
    det = tab([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(tilt(det, 0.3).row("x0"), [0, 1, 0])
    b = tab([0.5, 0.3, 0.2])
    assert 0.5 * np.abs(tilt(b, 1e9).row("x0") - b.row("x0")).sum() < 1e-6


def test_tilt_requires_positive_beta():
    with pytest.raises(DomainError):
        tilt(tab([0.5, 0.5]), 0.0)


def test_j_beta_values():
    u = tab([0.5, 0.5])
    mu = uniform_mu(u)
    assert j_beta(u, u, mu, 1.0) == pytest.approx(-0.693147, abs=1e-6)
    assert j_beta(tab([1.0, 0.0]), u, mu, 1.0) == pytest.approx(-1.386294, abs=1e-6)


def test_j_beta_off_support_is_neg_inf():
    assert j_beta(tab([0.5, 0.5]), tab([1.0, 0.0]), uniform_mu(tab([1.0, 0.0])), 1.0) == -math.inf


def test_divergences_closed_form():
    p, q = tab([1.0, 0.0]), tab([0.5, 0.5])
    d = divergences(p, q, uniform_mu(p))
    assert d["kl"] == pytest.approx(math.log(2))
    assert d["hellinger_sq"] == pytest.approx(2 - 2 * math.sqrt(0.5))
    z = divergences(q, q, uniform_mu(q))
    assert z["kl"] == pytest.approx(0.0, abs=1e-15) and z["hellinger_sq"] == pytest.approx(0.0, abs=1e-15)


def test_hellinger_below_kl_random_pairs():
    r = RngStream(0)
    for _ in range(1000):
        k = int(r.integers(2, 8))
        p, q = tab(r.dirichlet(np.ones(k))), tab(r.dirichlet(np.ones(k)))
        d = divergences(p, q, uniform_mu(p))
        assert d["hellinger_sq"] <= d["kl"] + 1e-12


@settings(max_examples=60, deadline=None)
@given(row_st, st.floats(0.05, 5.0))
def test_tilt_maximizes_j_beta(row, beta):
    base = tab(row)
    mu = uniform_mu(base)
    best = j_beta(tilt(base, beta), base, mu, beta)
    r = RngStream(int(beta * 1000))
    for _ in range(20):
        cand = tab(r.dirichlet(np.ones(len(row))))
        assert j_beta(cand, base, mu, beta) <= best + 1e-10


@settings(max_examples=60, deadline=None)
@given(row_st, st.floats(0.05, 5.0))
def test_tilt_concentrability_within_coverage(row, beta):
    base = tab(row)
    mu = uniform_mu(base)
    t = tilt(base, beta)
    assert concentrability(t, base, mu) <= coverage_profile(base, mu).c_cov * (1 + 1e-12)
    assert loss_concentrability(base, t, mu, beta) <= len(row) * (1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(row_st)
def test_concentrability_of_base_is_one(row):
    base = tab(row)
    assert concentrability(base, base, uniform_mu(base)) == pytest.approx(1.0)
