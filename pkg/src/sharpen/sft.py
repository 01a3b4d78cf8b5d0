"""SFT-Sharpening: best-of-N data collection, the exact best-of-N law, and MLE fitting."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .decode import Candidate, SelfReward, bon_select
from .errors import CapacityError, DomainError, ValidationError
from .metrics import prob_levels
from .models import (TIE_TOL, ConditionalModel, LinearSoftmaxModel, PromptSpace, ResponseSpace, TabularModel,
                     cdf_of)
from .optim import spg_minimize
from .oracle import OracleSession
from .rng import RngStream

ENUM_CAP = 100_000


@dataclass
class BonDataset:
    records: list = field(default_factory=list)  # (prompt, response)
    group_sizes: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def counts(self, prompts: PromptSpace, responses: ResponseSpace) -> np.ndarray:
        C = np.zeros((len(prompts), len(responses)))
        for x, y in self.records:
            C[prompts.index(x), responses.index(y)] += 1
        return C


# ---------------------------------------------------------------------------
# model classes


class FiniteClass:
    def __init__(self, models: Sequence[ConditionalModel]):
        self.models = list(models)
        if not self.models:
            raise ValidationError("finite model class must be non-empty")
        first = self.models[0]
        if any(not m.same_spaces(first) for m in self.models):
            raise ValidationError("all class members must share spaces")
        self.prompts, self.responses = first.prompts, first.responses

    def __len__(self):
        return len(self.models)

    @property
    def log_size(self) -> float:
        return math.log(len(self.models))

    def members(self):
        return list(self.models)


class ProductClass:
    """All models choosing, independently per prompt, one row from a candidate list.

    Stands for the class of size prod_x k_x without enumerating it; fitting
    decomposes across prompts.
    """

    def __init__(self, prompts: PromptSpace, responses: ResponseSpace, rows: Sequence[np.ndarray]):
        self.prompts, self.responses = prompts, responses
        self.rows = [np.atleast_2d(np.asarray(r, dtype=float)) for r in rows]
        if len(self.rows) != len(prompts):
            raise ValidationError("need one candidate list per prompt")
        for r in self.rows:
            if r.shape[1] != len(responses) or np.any(np.abs(r.sum(axis=1) - 1) > 1e-9):
                raise ValidationError("candidate rows must be distributions over the response space")

    def __len__(self):
        return math.prod(len(r) for r in self.rows)

    @property
    def log_size(self) -> float:
        return float(sum(math.log(len(r)) for r in self.rows))

    def member(self, choice: Sequence[int]) -> TabularModel:
        return TabularModel(self.prompts, self.responses,
                            np.stack([self.rows[i][c] for i, c in enumerate(choice)]))

    def members(self, cap: int = ENUM_CAP, rng: RngStream | None = None) -> list[TabularModel]:
        """Enumerate the class; above ``cap`` members a seeded subsample is returned."""
        if len(self) <= cap:
            return [self.member(c) for c in itertools.product(*(range(len(r)) for r in self.rows))]
        rng = rng or RngStream(0)
        return [self.member([int(rng.integers(len(r))) for r in self.rows]) for _ in range(cap)]

    def map_rows(self, fn) -> "ProductClass":
        return ProductClass(self.prompts, self.responses, [np.stack([fn(i, r) for r in rs])
                                                           for i, rs in enumerate(self.rows)])


class TabularClass:
    """Implicit class of every tabular model on the given spaces."""

    def __init__(self, prompts: PromptSpace, responses: ResponseSpace):
        self.prompts, self.responses = prompts, responses

    @property
    def log_size(self) -> float:
        return math.inf


class LinearSoftmaxClass:
    def __init__(self, prompts: PromptSpace, responses: ResponseSpace, features, bound: float,
                 feature_bound: float | None = 1.0):
        self.prompts, self.responses = prompts, responses
        self.features = [np.asarray(f, dtype=float) for f in features]
        self.bound = float(bound)
        self.feature_bound = feature_bound

    @property
    def layers(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features[0].shape[2]

    def model(self, theta) -> LinearSoftmaxModel:
        return LinearSoftmaxModel(self.prompts, self.responses, self.features, theta, self.bound,
                                  self.feature_bound)

    def zero(self) -> LinearSoftmaxModel:
        return self.model([np.zeros(f.shape[2]) for f in self.features])

    def flat(self, theta) -> np.ndarray:
        return np.concatenate([np.asarray(t, float) for t in theta])

    def unflat(self, v) -> list[np.ndarray]:
        out, k = [], 0
        for f in self.features:
            d = f.shape[2]
            out.append(np.array(v[k:k + d]))
            k += d
        return out

    def project(self, v) -> np.ndarray:
        """Project each layer onto the norm ball of radius ``bound``."""
        parts = self.unflat(v)
        for i, t in enumerate(parts):
            nrm = np.linalg.norm(t)
            if nrm > self.bound:
                parts[i] = t * (self.bound / nrm)
        return self.flat(parts)


# ---------------------------------------------------------------------------
# exact best-of-N law


def bon_row(probs: np.ndarray, N: int, log_row: np.ndarray | None = None) -> np.ndarray:
    if N < 1:
        raise DomainError("N must be >= 1")
    probs = np.asarray(probs, dtype=float)
    if log_row is None:
        with np.errstate(divide="ignore"):
            log_row = np.log(probs)
    levels = prob_levels(log_row)
    out = np.zeros_like(probs)
    cum = 0.0
    for lv in sorted(set(levels[levels >= 0].tolist()), reverse=True):
        members = levels == lv
        q = float(probs[members].sum())
        above = cum
        cum = above + q
        # P(max level == lv) = P(all draws at or below lv) - P(all draws strictly below lv)
        below_incl = max(0.0, 1.0 - above)
        below_excl = max(0.0, 1.0 - cum)
        out[members] = (below_incl**N - below_excl**N) / members.sum()
    return out


def exact_bon_distribution(base: ConditionalModel, x, N: int) -> np.ndarray:
    """Law of the first-drawn log-likelihood maximizer among N i.i.d. draws."""
    xi = base.prompts.index(x)
    return bon_row(base.prob_table()[xi], N, base.log_table()[xi])


def bon_model(base: ConditionalModel, N: int) -> TabularModel:
    P = np.stack([bon_row(base.prob_table()[i], N, base.log_table()[i]) for i in range(len(base.prompts))])
    P /= P.sum(axis=1, keepdims=True)
    return TabularModel(base.prompts, base.responses, P)


def bon_class(hypotheses, N: int):
    """Image of a hypothesis class under the best-of-N map (realizable for SFT)."""
    if isinstance(hypotheses, ProductClass):
        return hypotheses.map_rows(lambda i, r: _renorm(bon_row(r, N)))
    if isinstance(hypotheses, FiniteClass):
        return FiniteClass([bon_model(m, N) for m in hypotheses.models])
    raise DomainError(f"cannot form the best-of-N image of {type(hypotheses).__name__}")


def _renorm(r):
    return r / r.sum()


# ---------------------------------------------------------------------------
# data collection


def collect_bon_dataset(session: OracleSession, n: int, N: int, reward: SelfReward, rng: RngStream) -> BonDataset:
    if n < 1 or N < 1:
        raise DomainError("n and N must be >= 1")
    data = BonDataset()
    rs = session.base.responses
    fast = reward.kind == "log_likelihood"
    for _ in range(n):
        x = session.draw_prompt(rng)
        if fast:
            idx, lps = session.draw_many(x, N, rng)
            j = bon_select([(None, float(lp)) for lp in lps], reward)
            y = rs.item(int(idx[j]))
        else:
            items = []
            for _ in range(N):
                yy, lp = session.draw_and_evaluate(x, rng)
                items.append(Candidate(yy, lp, rs.length(yy)))
            y = items[bon_select(items, reward)].response
        data.records.append((x, y))
        data.group_sizes.append(N)
    return data


@dataclass(frozen=True)
class StoppingConfig:
    mu_stop: float
    cap: int = 1_000_000

    def __post_init__(self):
        if not self.mu_stop > 0:
            raise DomainError("mu_stop must be positive")
        if self.cap < 1:
            raise DomainError("cap must be >= 1")


def stop_now(k: int, max_logprob: float, mu_stop: float) -> bool:
    """True once 1 / max_j pi(y_j|x) <= k / mu_stop."""
    return k * math.exp(max_logprob) >= mu_stop * (1.0 - 1e-12)


def adaptive_collect(session: OracleSession, n: int, cfg: StoppingConfig, rng: RngStream) -> BonDataset:
    if session.mode != "adaptive":
        raise DomainError("adaptive collection needs an adaptive session")
    data = BonDataset()
    for _ in range(n):
        x = session.draw_prompt(rng)
        best_y, best_lp = session.draw_and_evaluate(x, rng)
        k = 1
        while not stop_now(k, best_lp, cfg.mu_stop):
            if k >= cfg.cap:
                raise CapacityError(f"stopping rule did not fire within cap={cfg.cap} draws")
            y, lp = session.draw_and_evaluate(x, rng)
            k += 1
            if lp > best_lp + TIE_TOL:  # strict: ties keep the first-drawn response
                best_y, best_lp = y, lp
        data.records.append((x, best_y))
        data.group_sizes.append(k)
    return data


# ---------------------------------------------------------------------------
# Monte Carlo simulation through the kernels (test-side and harness helpers)

_CHUNK = 4_000_000


def simulate_bon(probs: np.ndarray, N: int, trials: int, rng: RngStream) -> np.ndarray:
    """Indices selected by best-of-N over ``trials`` independent groups."""
    probs = np.asarray(probs, float)
    with np.errstate(divide="ignore"):
        levels = prob_levels(np.log(probs))
    cdf = cdf_of(probs)
    out = np.empty(trials, dtype=np.int64)
    step = max(1, _CHUNK // N)
    for s in range(0, trials, step):
        k = min(step, trials - s)
        out[s:s + k] = kernels.bon_select(cdf, levels, rng.random((k, N)))
    return out


def simulate_adaptive(probs: np.ndarray, mu_stop: float, trials: int, rng: RngStream,
                      cap: int = 1_000_000) -> tuple[np.ndarray, np.ndarray]:
    """Realized stopping times and selected indices for the adaptive stopping rule."""
    probs = np.asarray(probs, float)
    with np.errstate(divide="ignore"):
        levels = prob_levels(np.log(probs))
    cdf = cdf_of(probs)
    pmin = probs[probs > 0].min()
    # any first draw already forces a stop by ceil(mu / pmin)
    L = int(min(cap, max(1, math.ceil(mu_stop / pmin) + 1)))
    n_used = np.empty(trials, dtype=np.int64)
    sel = np.empty(trials, dtype=np.int64)
    step = max(1, _CHUNK // L)
    for s in range(0, trials, step):
        k = min(step, trials - s)
        nu, se = kernels.adaptive_stop(cdf, probs, levels, mu_stop, rng.random((k, L)))
        if np.any(nu < 0):
            raise CapacityError(f"stopping rule did not fire within cap={cap} draws")
        n_used[s:s + k], sel[s:s + k] = nu, se
    return n_used, sel


# ---------------------------------------------------------------------------
# maximum likelihood


def _counts_of(data: BonDataset, prompts, responses) -> np.ndarray:
    if len(data) == 0:
        raise DomainError("cannot fit on an empty dataset")
    return data.counts(prompts, responses)


def _loglik(C: np.ndarray, log_table: np.ndarray) -> float:
    pos = C > 0
    return float(np.sum(C[pos] * log_table[pos]))


def _first_argmax(vals) -> int:
    vals = np.asarray(vals, float)
    return int(np.flatnonzero(vals == vals.max())[0])


def mle_fit(cls, data: BonDataset, **opts) -> ConditionalModel:
    C = _counts_of(data, cls.prompts, cls.responses)
    if isinstance(cls, FiniteClass):
        return cls.models[_first_argmax([_loglik(C, m.log_table()) for m in cls.models])]
    if isinstance(cls, ProductClass):
        choice = []
        for i, rows in enumerate(cls.rows):
            with np.errstate(divide="ignore"):
                lr = np.log(rows)
            choice.append(_first_argmax([_loglik(C[i], r) for r in lr]) if C[i].sum() > 0 else 0)
        return cls.member(choice)
    if isinstance(cls, TabularClass):
        tot = C.sum(axis=1, keepdims=True)
        P = np.where(tot > 0, C / np.where(tot > 0, tot, 1), 1.0 / C.shape[1])
        return TabularModel(cls.prompts, cls.responses, P)
    if isinstance(cls, LinearSoftmaxClass):
        return _mle_softmax(cls, C, **opts)
    raise DomainError(f"unsupported model class {type(cls).__name__}")


def _mle_softmax(cls: LinearSoftmaxClass, C: np.ndarray, max_iter: int = 2000, tol: float = 1e-8,
                 theta0=None) -> LinearSoftmaxModel:
    total = C.sum()
    pairs = np.argwhere(C > 0)
    weights = C[C > 0] / total

    def f_and_g(v):
        m = cls.model(cls.unflat(cls.project(v)))
        lt = m.log_table()
        val = -float(np.sum(weights * lt[pairs[:, 0], pairs[:, 1]]))
        g = np.zeros_like(v)
        for w, (xi, yi) in zip(weights, pairs):
            g -= w * cls.flat(m.grad_logprob(int(xi), int(yi)))
        return val, g

    v0 = cls.flat(theta0) if theta0 is not None else np.zeros(sum(f.shape[2] for f in cls.features))
    res = spg_minimize(f_and_g, v0, cls.project, max_iter=max_iter, tol=tol)
    return cls.model(cls.unflat(res.x))
