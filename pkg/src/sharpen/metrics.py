"""Exact diagnostics: argmax sets, sharpness, coverage, concentrability, KL-regularized value.

Everything here is an exact weighted sum over the prompt distribution and the
enumerated response space. No Monte Carlo.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError
from .models import TIE_TOL, ConditionalModel, PromptDistribution, TabularModel


def argmax_mask(log_row: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    m = np.max(log_row)
    return log_row >= m - tol


def gamma_mask(log_row: np.ndarray, gamma: float, tol: float = TIE_TOL) -> np.ndarray:
    if not 0.0 <= gamma < 1.0:
        raise DomainError(f"gamma must lie in [0, 1), got {gamma}")
    if gamma == 0.0:
        return argmax_mask(log_row, tol)
    return log_row >= np.max(log_row) + math.log1p(-gamma) - tol


def prob_levels(log_row: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """Integer rank of each response's probability; ties within ``tol`` share a rank.

    Higher rank means higher probability. Zero-probability responses get rank -1.
    """
    order = np.argsort(-log_row, kind="stable")
    levels = np.empty(len(log_row), dtype=np.int64)
    rank = 0
    prev = None
    for i in order:
        v = log_row[i]
        if prev is not None and not (v == prev or prev - v <= tol):
            rank += 1
        levels[i] = rank
        prev = v
    levels = levels.max() - levels
    levels[np.isneginf(log_row)] = -1
    return levels


def argmax_set(model: ConditionalModel, x, tol: float = TIE_TOL) -> list:
    mask = argmax_mask(model.log_row(x), tol)
    return [model.responses.item(i) for i in np.flatnonzero(mask)]


def gamma_argmax_set(model: ConditionalModel, x, gamma: float) -> list:
    mask = gamma_mask(model.log_row(x), gamma)
    return [model.responses.item(i) for i in np.flatnonzero(mask)]


@dataclass
class SharpnessVerdict:
    epsilon_hat: float
    masses: dict
    delta: float
    gamma: float

    def passes(self, epsilon: float) -> bool:
        return self.epsilon_hat <= epsilon

    def to_dict(self) -> dict:
        return {"epsilon_hat": self.epsilon_hat, "delta": self.delta, "gamma": self.gamma,
                "masses": {str(k): v for k, v in self.masses.items()}}


def target_masses(candidate: ConditionalModel, base: ConditionalModel, gamma: float = 0.0) -> np.ndarray:
    """Per-prompt candidate mass on the base model's (1-gamma)-approximate argmax set."""
    lb = base.log_table()
    pc = candidate.prob_table()
    out = np.empty(len(base.prompts))
    for i in range(len(out)):
        out[i] = pc[i][gamma_mask(lb[i], gamma)].sum()
    return out


def sharpness_check(candidate: ConditionalModel, base: ConditionalModel, mu: PromptDistribution,
                    delta: float, gamma: float = 0.0) -> SharpnessVerdict:
    if not candidate.same_spaces(base):
        raise DomainError("candidate and base must share prompt and response spaces")
    masses = target_masses(candidate, base, gamma)
    bad = masses < 1.0 - delta
    eps = float(np.sum(mu.weights[bad]))
    return SharpnessVerdict(eps, {x: float(m) for x, m in zip(base.prompts, masses)}, delta, gamma)


@dataclass
class CoverageProfile:
    c_cov: float
    c_cov_gamma: float
    c_cov_gamma_p: float
    c_cov_bar: float
    margin_max: float
    gamma: float
    p: int
    beta: float
    c_conc: list = field(default_factory=list)
    c_loss: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["margin_max"] = "inf" if math.isinf(self.margin_max) else self.margin_max
        return d


def _expect_mu(mu: PromptDistribution, per_prompt: np.ndarray) -> float:
    w = mu.weights
    sup = w > 0
    return float(np.sum(w[sup] * per_prompt[sup]))


def margin_max(base: ConditionalModel, mu: PromptDistribution) -> float:
    lb = base.log_table()
    best = math.inf
    for i in mu.support():
        row = lb[i]
        mask = argmax_mask(row)
        if mask.all():
            continue
        ratio = math.exp(np.max(row) - np.max(row[~mask]))
        best = min(best, ratio - 1.0)
    return best


def coverage_profile(base: ConditionalModel, mu: PromptDistribution, gamma: float = 0.0, p: int = 1,
                     candidates=(), beta: float = 1.0) -> CoverageProfile:
    lb = base.log_table()
    pb = base.prob_table()
    X = len(base.prompts)
    star = np.array([pb[i][argmax_mask(lb[i])].sum() for i in range(X)])
    ystar_g = np.array([pb[i][gamma_mask(lb[i], gamma)].sum() for i in range(X)])
    top = pb.max(axis=1)
    with np.errstate(divide="ignore"):
        c_cov = _expect_mu(mu, 1.0 / star)
        c_cov_g = _expect_mu(mu, 1.0 / ystar_g)
        c_cov_gp = _expect_mu(mu, ystar_g ** (-float(p))) ** (1.0 / p)
        c_bar = _expect_mu(mu, 1.0 / top)
    return CoverageProfile(
        c_cov=c_cov, c_cov_gamma=c_cov_g, c_cov_gamma_p=c_cov_gp, c_cov_bar=c_bar,
        margin_max=margin_max(base, mu), gamma=gamma, p=p, beta=beta,
        c_conc=[concentrability(c, base, mu) for c in candidates],
        c_loss=[loss_concentrability(base, c, mu, beta) for c in candidates],
    )


def concentrability(pi: ConditionalModel, base: ConditionalModel, mu: PromptDistribution) -> float:
    """E_pi[pi(y|x) / base(y|x)]."""
    lp, lb = pi.log_table(), base.log_table()
    pp = np.exp(lp)
    with np.errstate(invalid="ignore"):
        ratio = np.where(pp > 0, np.exp(lp - lb), 0.0)
    return _expect_mu(mu, np.sum(pp * ratio, axis=1))


def loss_concentrability(pi: ConditionalModel, other: ConditionalModel, mu: PromptDistribution,
                         beta: float) -> float:
    """E_pi[(pi(y|x) / other(y|x))^beta]."""
    lp, lo = pi.log_table(), other.log_table()
    pp = np.exp(lp)
    with np.errstate(invalid="ignore"):
        ratio = np.where(pp > 0, np.exp(beta * (lp - lo)), 0.0)
    return _expect_mu(mu, np.sum(pp * ratio, axis=1))


def tilt(base: ConditionalModel, beta: float) -> TabularModel:
    """The KL-regularized optimum for the log-likelihood reward: base^(1 + 1/beta), renormalized."""
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    lt = (1.0 + 1.0 / beta) * base.log_table()
    return TabularModel.from_log_table(base.prompts, base.responses, lt)


def _reward_table(base: ConditionalModel, reward) -> np.ndarray:
    if reward is None:
        return base.log_table()
    if callable(reward):
        return np.array([[reward(x, y) for y in base.responses.items] for x in base.prompts], dtype=float)
    return np.asarray(reward, dtype=float)


def j_beta(candidate: ConditionalModel, base: ConditionalModel, mu: PromptDistribution, beta: float,
           reward=None) -> float:
    """E_pi[r] - beta * KL(pi || base); reward defaults to log base."""
    lp, lb = candidate.log_table(), base.log_table()
    pp = np.exp(lp)
    r = _reward_table(base, reward)
    pos = pp > 0
    if np.any(pos & np.isneginf(lb)):
        # candidate charges a response the base never produces
        sup = np.asarray(mu.weights) > 0
        if np.any((pos & np.isneginf(lb))[sup]):
            return -math.inf
    per = np.zeros(len(pp))
    for i in range(len(pp)):
        m = pos[i]
        per[i] = np.sum(pp[i, m] * (r[i, m] - beta * (lp[i, m] - lb[i, m])))
    return _expect_mu(mu, per)


def divergences(p: ConditionalModel, q: ConditionalModel, mu: PromptDistribution) -> dict:
    """KL(p || q) and squared Hellinger (un-halved: sum of (sqrt p - sqrt q)^2)."""
    lp, lq = p.log_table(), q.log_table()
    pp, pq = np.exp(lp), np.exp(lq)
    pos = pp > 0
    if np.any((pos & (pq == 0))[np.asarray(mu.weights) > 0]):
        kl = math.inf
    else:
        with np.errstate(invalid="ignore"):
            terms = np.where(pos, pp * (lp - lq), 0.0)
        kl = _expect_mu(mu, terms.sum(axis=1))
    hel = _expect_mu(mu, 2.0 - 2.0 * np.sum(np.sqrt(pp * pq), axis=1))
    return {"kl": kl, "hellinger_sq": max(hel, 0.0)}


def log_normalizer(log_row: np.ndarray) -> float:
    return float(logsumexp(log_row))
