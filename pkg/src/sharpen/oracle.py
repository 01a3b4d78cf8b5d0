"""Budget-accounted sample-and-evaluate access to a base model.

A session hands out prompts drawn from the prompt distribution and, for the
currently open prompt only, responses sampled from the base model together
with their exact log-probabilities. Every query is logged so downstream
algorithms can be replayed from the log alone.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExhausted, DomainError, StateError
from .models import ConditionalModel, PromptDistribution, cdf_of
from .rng import RngStream
from . import kernels


@dataclass(frozen=True)
class Query:
    group: int
    prompt: object
    response: object
    logprob: float
    kind: str = "sample"  # "sample" or "evaluate"


class OracleSession:
    """Sample-and-evaluate oracle.

    ``mode="fixed"`` enforces exactly ``N`` responses per prompt at most and a
    total budget ``n_max * N`` when ``n_max`` is given. ``mode="adaptive"``
    allows any number of responses per prompt. ``relaxed=True`` additionally
    allows evaluate-only queries at arbitrary ``(x, y)``.
    """

    def __init__(self, base: ConditionalModel, mu: PromptDistribution, mode: str = "fixed",
                 N: int | None = None, n_max: int | None = None, m_max: int | None = None,
                 relaxed: bool = False):
        if mode not in ("fixed", "adaptive"):
            raise DomainError(f"unknown session mode {mode!r}")
        if mode == "fixed" and N is not None and N < 1:
            raise DomainError("N must be >= 1")
        if mu.prompts != base.prompts:
            raise DomainError("prompt distribution and base model disagree on the prompt space")
        self.base = base
        self.mu = mu
        self.mode = mode
        self.N = N
        self.n_max = n_max
        self.m_max = m_max if m_max is not None else (n_max * N if (n_max and N) else None)
        self.relaxed = relaxed
        self.log: list[Query] = []
        self.group_sizes: list[int] = []
        self.group_prompts: list = []
        self.n_evaluations = 0
        self._open: int | None = None
        self._sealed = False
        self._cdf_cache: dict[int, np.ndarray] = {}

    # -- lifecycle -----------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.group_sizes)

    @property
    def m(self) -> int:
        return sum(self.group_sizes)

    def seal(self):
        self._open = None
        self._sealed = True

    def _check_active(self):
        if self._sealed:
            raise StateError("session is sealed")

    def draw_prompt(self, rng: RngStream):
        self._check_active()
        if self.n_max is not None and self.n >= self.n_max:
            raise BudgetExhausted(f"prompt budget n={self.n_max} exhausted")
        xi = self.mu.sample_index(rng)
        self._open = xi
        self.group_sizes.append(0)
        self.group_prompts.append(self.base.prompts.items[xi])
        return self.base.prompts.items[xi]

    def _reserve(self, x, k: int) -> int:
        self._check_active()
        if self._open is None or self.base.prompts.items[self._open] != x:
            raise StateError(f"prompt {x!r} is not the currently open prompt of this session")
        if self.mode == "fixed" and self.N is not None and self.group_sizes[-1] + k > self.N:
            raise BudgetExhausted(f"more than N={self.N} responses requested for one prompt")
        if self.m_max is not None and self.m + k > self.m_max:
            raise BudgetExhausted(f"total budget m={self.m_max} exhausted")
        return self._open

    def draw_and_evaluate(self, x, rng: RngStream):
        xi = self._reserve(x, 1)
        yi = self.base.sample_index(xi, rng)
        y = self.base.responses.item(yi)
        lp = float(self.base.log_table()[xi, yi])
        self.group_sizes[-1] += 1
        self.log.append(Query(self.n - 1, x, y, lp))
        return y, lp

    def draw_many(self, x, k: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized ``k`` draws for the open prompt; returns response indices and logprobs."""
        xi = self._reserve(x, k)
        if xi not in self._cdf_cache:
            self._cdf_cache[xi] = cdf_of(self.base.prob_table()[xi])
        idx = kernels.draw_categorical(self._cdf_cache[xi], rng.random(k))
        lps = self.base.log_table()[xi, idx]
        self.group_sizes[-1] += k
        g = self.n - 1
        items = self.base.responses
        self.log.extend(Query(g, x, items.item(int(i)), float(lp)) for i, lp in zip(idx, lps))
        return idx, lps

    def evaluate(self, x, y) -> float:
        """Evaluate-only query; permitted on relaxed sessions only."""
        self._check_active()
        if not self.relaxed:
            raise StateError("evaluate-only queries require a relaxed session")
        lp = self.base.logprob(x, y)
        self.n_evaluations += 1
        self.log.append(Query(max(self.n - 1, 0), x, y, lp, kind="evaluate"))
        return lp

    def budget_report(self) -> dict:
        return {"n": self.n, "N_max": max(self.group_sizes, default=0), "m": self.m}

    # -- log export ----------------------------------------------------
    def export_log(self, path) -> None:
        with open(path, "w") as fh:
            for q in self.log:
                fh.write(json.dumps(query_to_record(q)) + "\n")


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def query_to_record(q: Query) -> dict:
    return {"group": q.group, "prompt": _jsonable(q.prompt), "response": _jsonable(q.response),
            "logprob": q.logprob, "kind": q.kind}


def read_log(path, response_space=None) -> list[Query]:
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            r = json.loads(line)
            y = r["response"]
            if isinstance(y, list):
                y = tuple(y)
            x = r["prompt"]
            out.append(Query(r["group"], x, y, r["logprob"], r.get("kind", "sample")))
    return out


def groups(log: list[Query], kind: str = "sample") -> list[list[Query]]:
    """Queries of one kind grouped by prompt draw, in draw order."""
    out: dict[int, list[Query]] = {}
    for q in log:
        if q.kind == kind:
            out.setdefault(q.group, []).append(q)
    return [out[g] for g in sorted(out)]
