"""Inference-time sharpening: greedy decoding, exact argmax, best-of-N selection."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CapacityError, DomainError, SelectionError
from .metrics import argmax_mask
from .models import MAX_ENUM, TIE_TOL, ConditionalModel, _Sequential
from .oracle import OracleSession
from .rng import RngStream

REWARD_KINDS = ("log_likelihood", "length_normalized", "majority", "external_label")


@dataclass(frozen=True)
class SelfReward:
    kind: str = "log_likelihood"
    delimiter: str | None = None

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise DomainError(f"unknown reward kind {self.kind!r}")

    def extract(self, answer):
        """Answer string used by the majority reward.

        With a delimiter, the answer is the text after its last occurrence.
        """
        if answer is None:
            return None
        if self.delimiter is not None:
            s = str(answer)
            if self.delimiter not in s:
                return None
            return s.rsplit(self.delimiter, 1)[1].strip()
        return answer


@dataclass
class Candidate:
    response: object
    logprob: float
    length: int = 1
    answer: object = None
    correct: bool | None = None


def _as_candidate(item) -> Candidate:
    if isinstance(item, Candidate):
        return item
    if isinstance(item, dict):
        return Candidate(item["response"], item["logprob"], item.get("length", 1), item.get("answer"),
                         item.get("correct"))
    return Candidate(*item)


def _first_max(scores: Sequence[float], tol: float = TIE_TOL) -> int:
    best = max(scores)
    for i, s in enumerate(scores):
        if s == best or (math.isfinite(s) and best - s <= tol):
            return i
    raise SelectionError("no finite score")


def bon_select(items: Sequence, reward: SelfReward = SelfReward()) -> int:
    """Index of the reward maximizer; ties go to the earliest (first drawn) item.

    ``items`` are ``Candidate`` objects, dicts, or tuples
    ``(response, logprob[, length[, answer[, correct]]])``.
    """
    cands = [_as_candidate(it) for it in items]
    if not cands:
        raise SelectionError("cannot select from an empty list")
    if reward.kind == "log_likelihood":
        return _first_max([c.logprob for c in cands])
    if reward.kind == "length_normalized":
        if any(c.length < 1 for c in cands):
            raise SelectionError("length-normalized reward needs lengths >= 1")
        return _first_max([c.logprob / c.length for c in cands])
    if reward.kind == "majority":
        answers = [reward.extract(c.answer) for c in cands]
        counts = Counter(a for a in answers if a is not None)
        if not counts:
            raise SelectionError("majority reward found no extractable answers")
        scores = [counts[a] if a is not None else -1 for a in answers]
        return _first_max(scores)
    # external_label: pick a correct response when one exists
    if all(c.correct is None for c in cands):
        raise SelectionError("external_label reward needs correctness labels")
    return _first_max([1.0 if c.correct else 0.0 for c in cands])


def bon_sample(session: OracleSession, x, N: int, reward: SelfReward, rng: RngStream):
    if N < 1:
        raise DomainError("N must be >= 1")
    items = []
    for _ in range(N):
        y, lp = session.draw_and_evaluate(x, rng)
        items.append(Candidate(y, lp, session.base.responses.length(y)))
    return items[bon_select(items, reward)].response


def required_N(rho: float, mass: float) -> int:
    """Smallest N with N >= ln(1/rho) / mass."""
    if not 0.0 < rho < 1.0:
        raise DomainError("rho must lie in (0, 1)")
    if not 0.0 < mass <= 1.0:
        raise DomainError("mass must lie in (0, 1]")
    v = math.log(1.0 / rho) / mass
    n = math.ceil(v - 1e-12)
    return max(1, n)


def greedy_decode(model: _Sequential, x):
    """Per-step argmax with lowest-token-index tie-break."""
    if not model.responses.is_sequence:
        row = model.log_row(x)
        return model.responses.item(int(np.flatnonzero(argmax_mask(row))[0]))
    xi = model.prompts.index(x)
    V = len(model.responses.vocab)
    prefix = 0
    for h in range(model.responses.horizon):
        row = model.step_log_table(h)[xi, prefix]
        tok = int(np.flatnonzero(argmax_mask(row))[0])
        prefix = prefix * V + tok
    return model.responses.item(prefix)


def exact_sequence_argmax(model: ConditionalModel, x, tol: float = TIE_TOL) -> list:
    """All responses whose log-probability is within ``tol`` of the maximum.

    Sequence models are ranked on per-layer shifted log tables, which keep
    tiny but genuine gaps; pass ``tol=0`` to separate them.
    """
    if model.responses.size > MAX_ENUM:
        raise CapacityError(f"{model.responses.size} responses exceed the enumeration cap {MAX_ENUM}")
    if isinstance(model, _Sequential):
        row = model.relative_log_table()[model.prompts.index(x)]
    else:
        row = model.log_row(x)
    return [model.responses.item(int(i)) for i in np.flatnonzero(argmax_mask(row, tol))]
