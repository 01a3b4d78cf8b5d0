"""RLHF-Sharpening: the squared-residual preference loss, its fitter, the XPO loop, and SEC."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import CapacityError, ConvergenceError, DomainError, StateError
from .metrics import j_beta
from .models import LOG_FLOOR, TIE_TOL, ConditionalModel, PromptDistribution, log_floor
from .optim import spg_minimize
from .oracle import OracleSession
from .rng import RngStream
from .sft import ENUM_CAP, FiniteClass, LinearSoftmaxClass, ProductClass


@dataclass
class PreferenceDataset:
    triples: list = field(default_factory=list)  # (prompt, y, y', base logprob y, base logprob y')

    def __len__(self):
        return len(self.triples)

    def append(self, x, y, yp, lp_y, lp_yp):
        self.triples.append((x, y, yp, float(lp_y), float(lp_yp)))

    def indices(self, prompts, responses) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        xi = np.array([prompts.index(t[0]) for t in self.triples], dtype=np.int64)
        yi = np.array([responses.index(t[1]) for t in self.triples], dtype=np.int64)
        ypi = np.array([responses.index(t[2]) for t in self.triples], dtype=np.int64)
        return xi, yi, ypi


def collect_preference_dataset(session: OracleSession, n: int, rng: RngStream) -> PreferenceDataset:
    """n triples (x, y, y') with y, y' drawn independently from the base model."""
    data = PreferenceDataset()
    for _ in range(n):
        x = session.draw_prompt(rng)
        y, lp = session.draw_and_evaluate(x, rng)
        yp, lpp = session.draw_and_evaluate(x, rng)
        data.append(x, y, yp, lp, lpp)
    return data


def _reward_table(base: ConditionalModel, reward) -> np.ndarray:
    if reward is None:
        return base.log_table()
    r = np.asarray(reward, dtype=float)
    if r.shape != base.log_table().shape:
        raise DomainError(f"reward table shape {r.shape} does not match the model")
    return r


def _targets(base, reward, beta, xi, yi, ypi) -> tuple[np.ndarray, int]:
    """beta * (log base(y) - log base(y')) + r(y) - r(y'), with floored logs."""
    lb = base.log_table()
    r = _reward_table(base, reward)
    raw = np.concatenate([lb[xi, yi], lb[xi, ypi], r[xi, yi], r[xi, ypi]])
    flagged = int(np.sum(raw < LOG_FLOOR))
    lb, r = log_floor(lb), log_floor(r)
    c = beta * (lb[xi, yi] - lb[xi, ypi]) + r[xi, yi] - r[xi, ypi]
    return c, flagged


@dataclass
class LossReport:
    loss: float
    floored: int


def dpo_loss(pi: ConditionalModel, base: ConditionalModel, data: PreferenceDataset, beta: float,
             reward=None, report: bool = False):
    """Sum over triples of (beta log pi/base (y) - beta log pi/base (y') - (r(y) - r(y')))^2.

    Log-probabilities below the floor are clamped; ``report=True`` returns the
    clamp count alongside the loss.
    """
    if not beta > 0:
        raise DomainError("beta must be positive")
    xi, yi, ypi = data.indices(base.prompts, base.responses)
    lp = pi.log_table()
    flagged = int(np.sum(lp[xi, yi] < LOG_FLOOR) + np.sum(lp[xi, ypi] < LOG_FLOOR))
    lp = log_floor(lp)
    c, f2 = _targets(base, reward, beta, xi, yi, ypi)
    res = beta * (lp[xi, yi] - lp[xi, ypi]) - c
    loss = float(np.sum(res * res))
    return LossReport(loss, flagged + f2) if report else loss


# ---------------------------------------------------------------------------
# parametric objective


class _SoftmaxObjective:
    """Squared residual loss plus optimism ``alpha * sum log pi(y'|x)``, over a flat parameter."""

    def __init__(self, cls: LinearSoftmaxClass, c, xi, yi, ypi, beta, alpha=0.0, scale=1.0):
        self.cls, self.beta, self.alpha, self.scale = cls, beta, alpha, scale
        self.c, self.xi, self.yi, self.ypi = c, xi, yi, ypi
        self.single = not cls.responses.is_sequence
        if self.single:
            F = cls.features[0]
            self.F = F
            D = F[xi, yi] - F[xi, ypi]
            self.A = D.T @ D
            self.b = D.T @ c
            self.cc = float(c @ c)
            self.s = F[xi, ypi].sum(axis=0)
            self.nx = np.bincount(xi, minlength=len(cls.prompts)).astype(float)

    def __call__(self, v):
        return self.value_grad(v)

    def value_grad(self, v):
        if self.single:
            return self._single(v)
        return self._general(v)

    def _single(self, v):
        b = self.beta
        val = b * b * float(v @ self.A @ v) - 2 * b * float(v @ self.b) + self.cc
        g = 2 * b * b * (self.A @ v) - 2 * b * self.b
        if self.alpha:
            logits = self.F @ v
            lz = logsumexp(logits, axis=1)
            p = np.exp(logits - lz[:, None])
            mean_phi = np.einsum("xy,xyd->xd", p, self.F)
            val += self.alpha * (float(v @ self.s) - float(self.nx @ lz))
            g += self.alpha * (self.s - self.nx @ mean_phi)
        return val / self.scale, g / self.scale

    def _general(self, v):
        cls = self.cls
        m = cls.model(cls.unflat(v))
        lp = log_floor(m.log_table())
        res = self.beta * (lp[self.xi, self.yi] - lp[self.xi, self.ypi]) - self.c
        val = float(res @ res)
        g = np.zeros_like(v)
        grad_cache: dict = {}

        def grad(x, y):
            key = (int(x), int(y))
            if key not in grad_cache:
                grad_cache[key] = cls.flat(m.grad_logprob(*key))
            return grad_cache[key]

        for r, x, y, yp in zip(res, self.xi, self.yi, self.ypi):
            g += 2 * r * self.beta * (grad(x, y) - grad(x, yp))
        if self.alpha:
            val += self.alpha * float(np.sum(lp[self.xi, self.ypi]))
            for x, yp in zip(self.xi, self.ypi):
                g += self.alpha * grad(x, yp)
        return val / self.scale, g / self.scale


def finite_difference_check(obj, v, h: float = 1e-6) -> float:
    """Relative error between the analytic gradient and central differences."""
    v = np.asarray(v, dtype=float)
    _, g = obj(v)
    fd = np.empty_like(v)
    for k in range(len(v)):
        e = np.zeros_like(v)
        e[k] = h
        fd[k] = (obj(v + e)[0] - obj(v - e)[0]) / (2 * h)
    denom = max(np.linalg.norm(fd), np.linalg.norm(g), 1e-12)
    return float(np.linalg.norm(g - fd) / denom)


def dpo_objective(cls: LinearSoftmaxClass, base, data: PreferenceDataset, beta: float, reward=None,
                  alpha: float = 0.0) -> _SoftmaxObjective:
    xi, yi, ypi = data.indices(cls.prompts, cls.responses)
    c, _ = _targets(base, reward, beta, xi, yi, ypi)
    return _SoftmaxObjective(cls, c, xi, yi, ypi, beta, alpha, scale=max(len(data), 1) * beta * beta)


def _first_min(vals, tol: float = TIE_TOL) -> int:
    vals = np.asarray(vals, dtype=float)
    lo = vals.min()
    return int(np.flatnonzero(vals <= lo + tol * max(1.0, abs(lo)))[0])


def dpo_fit(cls, base: ConditionalModel, data: PreferenceDataset, beta: float, reward=None,
            max_iter: int = 5000, tol: float = 1e-9, grad_check: bool = False, theta0=None):
    """Minimize the preference loss over a model class (ties to the lowest index)."""
    if not beta > 0:
        raise DomainError("beta must be positive")
    if len(data) == 0:
        raise DomainError("cannot fit on an empty dataset")
    if isinstance(cls, FiniteClass):
        return cls.models[_first_min([dpo_loss(m, base, data, beta, reward) for m in cls.models])]
    if isinstance(cls, ProductClass):
        xi, yi, ypi = data.indices(cls.prompts, cls.responses)
        c, _ = _targets(base, reward, beta, xi, yi, ypi)
        choice = []
        for i, rows in enumerate(cls.rows):
            sel = xi == i
            if not sel.any():
                choice.append(0)
                continue
            with np.errstate(divide="ignore"):
                lr = log_floor(np.log(rows))
            res = beta * (lr[:, yi[sel]] - lr[:, ypi[sel]]) - c[sel]
            choice.append(_first_min(np.sum(res * res, axis=1)))
        return cls.member(choice)
    if isinstance(cls, LinearSoftmaxClass):
        obj = dpo_objective(cls, base, data, beta, reward)
        v0 = cls.flat(theta0) if theta0 is not None else np.zeros(sum(f.shape[2] for f in cls.features))
        if grad_check:
            err = finite_difference_check(obj, v0)
            if err > 1e-4:
                raise ConvergenceError(f"gradient check failed with relative error {err:.3e}", err)
        res = spg_minimize(obj, v0, cls.project, max_iter=max_iter, tol=tol)
        if not res.converged:
            raise ConvergenceError(f"no convergence after {res.iters} iterations", res.pg_norm)
        return cls.model(cls.unflat(res.x))
    raise DomainError(f"unsupported model class {type(cls).__name__}")


# ---------------------------------------------------------------------------
# XPO


@dataclass(frozen=True)
class XpoConfig:
    T: int
    beta: float
    alpha: float = 0.0
    reward: object = None  # None means log base
    select: str = "exact"  # or "validation"
    validation_n: int = 2000
    capacity: int = ENUM_CAP
    inner_max_iter: int = 500
    inner_tol: float = 1e-10

    def __post_init__(self):
        if self.T < 1:
            raise DomainError("T must be >= 1")
        if not self.beta > 0:
            raise DomainError("beta must be positive")
        if self.alpha < 0:
            raise DomainError("alpha must be >= 0")
        if self.select not in ("exact", "validation"):
            raise DomainError(f"unknown selection mode {self.select!r}")


@dataclass
class XpoLog:
    rows: list = field(default_factory=list)
    best: int = 0  # 1-based iterate index

    COLUMNS = ("t", "j_beta", "loss", "optimism", "choice", "inner_pg")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r.get(k, "") for k in self.COLUMNS})


def estimate_j_beta(pi: ConditionalModel, base: ConditionalModel, mu: PromptDistribution, beta: float,
                    reward, n: int, rng: RngStream) -> float:
    """Monte Carlo J_beta from held-out draws x ~ mu, y ~ pi."""
    r = _reward_table(base, reward)
    lp, lb = pi.log_table(), base.log_table()
    tot = 0.0
    for _ in range(n):
        xi = mu.sample_index(rng)
        yi = pi.sample_index(xi, rng)
        tot += r[xi, yi] - beta * (lp[xi, yi] - lb[xi, yi])
    return tot / n


class _FiniteTracker:
    """Running per-candidate loss and optimism sums for enumerated classes."""

    def __init__(self, cls, beta):
        self.cls, self.beta = cls, beta
        if isinstance(cls, ProductClass):
            with np.errstate(divide="ignore"):
                self.logs = [log_floor(np.log(r)) for r in cls.rows]
            self.loss = [np.zeros(len(r)) for r in cls.rows]
            self.opt = [np.zeros(len(r)) for r in cls.rows]
        else:
            self.logs = np.stack([log_floor(m.log_table()) for m in cls.models])
            self.loss = np.zeros(len(cls.models))
            self.opt = np.zeros(len(cls.models))

    def add(self, xi, yi, ypi, c):
        if isinstance(self.cls, ProductClass):
            lr = self.logs[xi]
            res = self.beta * (lr[:, yi] - lr[:, ypi]) - c
            self.loss[xi] += res * res
            self.opt[xi] += lr[:, ypi]
        else:
            lr = self.logs[:, xi]
            res = self.beta * (lr[:, yi] - lr[:, ypi]) - c
            self.loss += res * res
            self.opt += lr[:, ypi]

    def solve(self, alpha):
        if isinstance(self.cls, ProductClass):
            choice = [_first_min(alpha * o + l) for o, l in zip(self.opt, self.loss)]
            loss = float(sum(l[k] for l, k in zip(self.loss, choice)))
            opt = float(sum(o[k] for o, k in zip(self.opt, choice)))
            return self.cls.member(choice), choice, loss, opt
        k = _first_min(alpha * self.opt + self.loss)
        return self.cls.models[k], k, float(self.loss[k]), float(self.opt[k])


def xpo_run(cls, base: ConditionalModel, mu: PromptDistribution, cfg: XpoConfig, session: OracleSession,
            rng: RngStream, init=None) -> tuple[ConditionalModel, XpoLog]:
    """Optimistic iterative fitting.

    Iteration t draws x ~ mu, y ~ pi^(t) and y' ~ base, then sets pi^(t+1)
    to the minimizer of ``alpha * sum log pi(y'|x) + sum residual^2`` over the
    class. The returned model maximizes J_beta over pi^(1) = base, ...,
    pi^(T+1). ``init`` is the class parameter representing the base model for
    parametric classes (used as the warm start).
    """
    if not session.relaxed:
        raise StateError("xpo_run needs a relaxed session (it evaluates base logprobs of policy samples)")
    sample_rng = rng.child(0)
    P, X = base.prompts, base.responses

    def draw(current):
        x = session.draw_prompt(sample_rng)
        xi = P.index(x)
        yi = current.sample_index(xi, sample_rng)
        session.evaluate(x, X.item(yi))
        yp, _ = session.draw_and_evaluate(x, sample_rng)
        return xi, yi, X.index(yp)

    return _xpo_loop(cls, base, mu, cfg, draw, rng.child(1), init)


def xpo_replay(cls, base: ConditionalModel, mu: PromptDistribution, cfg: XpoConfig, triples, rng: RngStream,
               init=None) -> tuple[ConditionalModel, XpoLog]:
    """Re-run the fitting sequence on recorded (prompt, y, y') triples."""
    P, X = base.prompts, base.responses
    it = iter([(P.index(x), X.index(y), X.index(yp)) for x, y, yp in triples])
    cfg = XpoConfig(**{**cfg.__dict__, "T": len(triples)})
    return _xpo_loop(cls, base, mu, cfg, lambda current: next(it), rng.child(1), init)


def _xpo_loop(cls, base, mu, cfg: XpoConfig, draw, val_rng: RngStream, init):
    if isinstance(cls, FiniteClass) and len(cls) > cfg.capacity:
        raise CapacityError(f"class of size {len(cls)} exceeds capacity {cfg.capacity}")
    if isinstance(cls, ProductClass) and max(len(r) for r in cls.rows) > cfg.capacity:
        raise CapacityError(f"per-prompt candidate list exceeds capacity {cfg.capacity}")
    if not isinstance(cls, (FiniteClass, ProductClass, LinearSoftmaxClass)):
        raise DomainError(f"unsupported model class {type(cls).__name__}")
    beta, reward = cfg.beta, cfg.reward

    def score(pi):
        if cfg.select == "exact":
            return j_beta(pi, base, mu, beta, reward)
        return estimate_j_beta(pi, base, mu, beta, reward, cfg.validation_n, val_rng)

    log = XpoLog()
    current = base
    best_model, best_j = base, score(base)
    log.rows.append({"t": 1, "j_beta": best_j, "loss": 0.0, "optimism": 0.0, "choice": "base", "inner_pg": 0.0})
    log.best = 1

    tracker = _FiniteTracker(cls, beta) if not isinstance(cls, LinearSoftmaxClass) else None
    xs, ys, yps = [], [], []
    v = None
    if tracker is None:
        v = cls.flat(init) if init is not None else np.zeros(sum(f.shape[2] for f in cls.features))

    for t in range(1, cfg.T + 1):
        xi, yi, ypi = draw(current)
        xs.append(xi), ys.append(yi), yps.append(ypi)
        if tracker is not None:
            c, _ = _targets(base, reward, beta, np.array([xi]), np.array([yi]), np.array([ypi]))
            tracker.add(xi, yi, ypi, float(c[0]))
            current, choice, loss, opt = tracker.solve(cfg.alpha)
            pg = 0.0
        else:
            xa, ya, ypa = np.array(xs), np.array(ys), np.array(yps)
            ca, _ = _targets(base, reward, beta, xa, ya, ypa)
            obj = _SoftmaxObjective(cls, ca, xa, ya, ypa, beta, cfg.alpha, scale=t * beta * beta)
            res = spg_minimize(obj, v, cls.project, max_iter=cfg.inner_max_iter, tol=cfg.inner_tol)
            v = res.x
            current = cls.model(cls.unflat(v))
            lp = log_floor(current.log_table())
            r = beta * (lp[xa, ya] - lp[xa, ypa]) - ca
            loss, opt = float(r @ r), float(np.sum(lp[xa, ypa]))
            choice, pg = float(np.linalg.norm(v)), res.pg_norm

        j = score(current)
        log.rows.append({"t": t + 1, "j_beta": j, "loss": loss, "optimism": opt,
                         "choice": " ".join(map(str, choice)) if isinstance(choice, list) else choice,
                         "inner_pg": pg})
        if j > best_j:
            best_model, best_j, log.best = current, j, t + 1
    return best_model, log


# ---------------------------------------------------------------------------
# SEC


def sec_along_sequence(policies, base: ConditionalModel, reward, beta: float, lam: float,
                       mu: PromptDistribution) -> float:
    """Sequential extrapolation ratio sum for the given policy sequence.

    Expectations are over x ~ mu, y ~ pi^(i), y' ~ base and are exact. This
    evaluates one sequence, so it lower-bounds the supremum over sequences.
    """
    if not lam > 0:
        raise DomainError("lambda must be positive")
    r = log_floor(_reward_table(base, reward))
    lb = log_floor(base.log_table())
    pb = base.prob_table()
    w = mu.weights
    probs = [p.prob_table() for p in policies]
    total = 0.0
    for t, pol in enumerate(policies):
        a = beta * (log_floor(pol.log_table()) - lb) - r
        ea_base = np.sum(pb * a, axis=1)
        ea_base2 = np.sum(pb * a * a, axis=1)
        num = float(w @ (np.sum(probs[t] * a, axis=1) - ea_base)) ** 2
        den = 0.0
        for i in range(t):
            e1 = np.sum(probs[i] * a, axis=1)
            e2 = np.sum(probs[i] * a * a, axis=1)
            den += float(w @ (e2 - 2 * e1 * ea_base + ea_base2))
        total += num / max(lam, den)
    return total
