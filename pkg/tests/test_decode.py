import math

import numpy as np
import pytest

from sharpen.decode import Candidate, SelfReward, bon_sample, bon_select, exact_sequence_argmax, greedy_decode, required_N
from sharpen.errors import DomainError, SelectionError
from sharpen.harness.verify import greedy_counterexample, random_ar_model
from sharpen.metrics import argmax_mask
from sharpen.models import AutoregressiveTabularModel, PromptSpace
from sharpen.oracle import OracleSession
from sharpen.rng import RngStream

from conftest import tab, uniform_mu


def test_bon_select_log_likelihood():
    assert bon_select([("a", -1.0), ("b", -0.5), ("c", -2.0)]) == 1


def test_bon_select_length_normalized():
    items = [Candidate("a", -2.0, 4), Candidate("b", -1.5, 2)]
    assert bon_select(items, SelfReward("length_normalized")) == 0


def test_bon_select_majority():
    items = [Candidate(f"r{i}", -1.0, 1, a) for i, a in enumerate("ABA")]
    k = bon_select(items, SelfReward("majority"))
    assert items[k].answer == "A"


def test_bon_select_majority_delimiter():
    items = [Candidate(i, -1.0, 1, a) for i, a in enumerate(["x #### 4", "y #### 5", "z #### 4", "none"])]
    assert bon_select(items, SelfReward("majority", delimiter="####")) == 0


def test_bon_select_tie_keeps_first():
    assert bon_select([("a", -1.0), ("b", -1.0)]) == 0
    assert bon_select([("a", -1.0), ("b", -1.0 + 1e-14)]) == 0


def test_bon_select_errors():
    with pytest.raises(SelectionError):
        bon_select([])
    with pytest.raises(SelectionError):
        bon_select([Candidate("a", -1.0)], SelfReward("majority"))
    with pytest.raises(DomainError):
        SelfReward("made_up")


def test_bon_sample_distribution():
    base = tab([0.6, 0.4])
    r = RngStream(0)
    n = 100_000
    s = OracleSession(base, uniform_mu(base), "fixed", N=2)
    hits = 0
    for _ in range(n):
        x = s.draw_prompt(r)
        hits += bon_sample(s, x, 2, SelfReward(), r) == "y0"
    assert abs(hits / n - 0.84) <= 0.01


def test_bon_sample_n1_and_deterministic():
    det = tab([0.0, 1.0])
    s = OracleSession(det, uniform_mu(det), "adaptive")
    r = RngStream(1)
    for N in (1, 3, 7):
        x = s.draw_prompt(r)
        assert bon_sample(s, x, N, SelfReward(), r) == "y1"


@pytest.mark.parametrize("rho,mass,expected", [(0.05, 0.1, 30), (1 / math.e, 1.0, 1), (math.exp(-2), 0.5, 4)])
def test_required_N(rho, mass, expected):
    assert required_N(rho, mass) == expected


def test_required_N_domain():
    with pytest.raises(DomainError):
        required_N(0.0, 0.5)
    with pytest.raises(DomainError):
        required_N(0.5, 0.0)


def test_greedy_unique_majority_argmax():
    assert greedy_decode(tab([0.2, 0.6, 0.2]), "x0") == "y1"


def test_greedy_counterexample_fails():
    m = greedy_counterexample()
    assert greedy_decode(m, "x") == ("b", "c")
    assert exact_sequence_argmax(m, "x") == [("a", "a")]


def test_greedy_deterministic_chain():
    P = PromptSpace(["x"])
    c1 = [[[0.0, 1.0]]]
    c2 = [[[1.0, 0.0], [1.0, 0.0]]]
    m = AutoregressiveTabularModel(P, ["p", "q"], [c1, c2])
    assert greedy_decode(m, "x") == ("q", "p")
    assert exact_sequence_argmax(m, "x") == [("q", "p")]


def test_greedy_horizon_one_matches_argmax():
    m = AutoregressiveTabularModel(PromptSpace(["x"]), list("abc"), [[[[0.2, 0.5, 0.3]]]])
    assert greedy_decode(m, "x") == ("b",)


def test_exact_argmax_agrees_with_flattened_table():
    r = RngStream(4)
    for _ in range(100):
        m = random_ar_model(r, int(r.integers(2, 6)), int(r.integers(1, 5)), 0.5)
        flat = m.log_table()[0]
        expected = [m.responses.item(int(i)) for i in np.flatnonzero(argmax_mask(flat))]
        assert exact_sequence_argmax(m, "x") == expected


def test_greedy_succeeds_above_half():
    r = RngStream(5)
    checked = 0
    while checked < 100:
        m = random_ar_model(r, 3, 3, 0.2)
        if m.prob_table()[0].max() <= 0.5:
            continue
        checked += 1
        assert [greedy_decode(m, "x")] == exact_sequence_argmax(m, "x")
