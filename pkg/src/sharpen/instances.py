"""Generators for the structured sharpening instances used by tests and experiments."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, DomainError
from .metrics import argmax_mask, coverage_profile
from .models import (ConditionalModel, LinearSoftmaxModel, PromptDistribution, PromptSpace, ResponseSpace,
                     TabularModel)
from .rng import RngStream
from .sft import LinearSoftmaxClass, ProductClass


@dataclass
class SharpeningInstance:
    name: str
    mu: PromptDistribution
    base: ConditionalModel
    model_class: object
    params: dict = field(default_factory=dict)
    truth: dict = field(default_factory=dict)

    @property
    def prompts(self):
        return self.base.prompts

    @property
    def responses(self):
        return self.base.responses


def ground_truth(base: ConditionalModel, mu: PromptDistribution, gamma: float = 0.0) -> dict:
    lt = base.log_table()
    prof = coverage_profile(base, mu, gamma=gamma)
    return {
        "argmax": [np.flatnonzero(argmax_mask(lt[i])).tolist() for i in range(len(base.prompts))],
        "c_cov": prof.c_cov,
        "c_cov_gamma": prof.c_cov_gamma,
        "margin_max": prof.margin_max,
        "gamma": gamma,
    }


def _finish(inst: SharpeningInstance, gamma: float = 0.0, **extra) -> SharpeningInstance:
    inst.truth = ground_truth(inst.base, inst.mu, gamma)
    inst.truth.update(extra)
    return inst


# ---------------------------------------------------------------------------
# lower-bound family


def lower_bound_rows(M: int, gamma: float = 0.5) -> np.ndarray:
    """Rows P_0..P_M over responses y_0..y_M."""
    if M < 2:
        raise DomainError("M must be >= 2")
    if not 0 < gamma < 1:
        raise DomainError("gamma must lie in (0, 1)")
    top = 1.0 / ((1 - gamma) * M)
    rest = (1.0 / M) * (1 - gamma / ((M - 1) * (1 - gamma)))
    if rest < 0 or top > 1:
        raise DomainError(f"M={M}, gamma={gamma} give negative probabilities")
    P = np.zeros((M + 1, M + 1))
    P[0, 0] = 1.0
    for i in range(1, M + 1):
        P[i, 1:] = rest
        P[i, i] = top
    return P


def lower_bound_family(d: int, M: int, delta_mass: float, gamma: float = 0.5, assignment=None,
                       rng: RngStream | None = None) -> SharpeningInstance:
    """Hard family: prompt x0 is deterministic, prompts x1..xd each hide one of M labels.

    The base model uses ``assignment`` (labels in 1..M per prompt); with
    neither assignment nor rng every prompt uses label 1.
    """
    if d < 1:
        raise DomainError("d must be >= 1")
    if not 0 < delta_mass < 1:
        raise DomainError("delta_mass must lie in (0, 1)")
    P = lower_bound_rows(M, gamma)
    prompts = PromptSpace([f"x{i}" for i in range(d + 1)])
    responses = ResponseSpace([f"y{j}" for j in range(M + 1)])
    if assignment is None:
        assignment = [1] * d if rng is None else [int(v) for v in rng.integers(1, M + 1, size=d)]
    if len(assignment) != d or any(not 1 <= a <= M for a in assignment):
        raise DomainError("assignment must give a label in 1..M for each of the d prompts")
    base = TabularModel(prompts, responses, np.stack([P[0]] + [P[a] for a in assignment]))
    w = np.array([1 - delta_mass] + [delta_mass / d] * d)
    mu = PromptDistribution(prompts, w)
    cls = ProductClass(prompts, responses, [P[:1]] + [P[1:]] * d)
    inst = SharpeningInstance("lower_bound_family", mu, base, cls,
                              {"d": d, "M": M, "delta_mass": delta_mass, "gamma": gamma,
                               "assignment": list(assignment)})
    return _finish(inst, gamma, log_class_size=d * math.log(M), class_size=M**d)


# ---------------------------------------------------------------------------
# softmax separation


def packing(d: int, size: int, rng: RngStream, threshold: float = 0.9, retry_cap: int = 200_000) -> np.ndarray:
    """Random unit vectors with pairwise inner products at most ``threshold``."""
    out = []
    tries = 0
    while len(out) < size:
        tries += 1
        if tries > retry_cap:
            raise CapacityError(f"packing stalled at {len(out)}/{size} vectors after {retry_cap} draws")
        v = rng.normal(size=d)
        v /= np.linalg.norm(v)
        if not out or np.max(np.asarray(out) @ v) <= threshold:
            out.append(v)
    return np.asarray(out)


def separation_constants(y_size: int, delta: float = 0.1, threshold: float = 0.9) -> dict:
    gm = math.exp(1 - threshold) - 1  # guaranteed margin from the inner-product gap
    L = math.log(2 * y_size / delta)
    return {"gamma_margin": gm, "beta": gm / (2 * L), "B": 3 * L / gm, "delta": delta}


def softmax_separation(d: int = 8, y_size: int = 64, B: float | None = None, rng: RngStream | None = None,
                       delta: float = 0.1, threshold: float = 0.9) -> SharpeningInstance:
    rng = rng or RngStream(0)
    vecs = packing(d, y_size, rng, threshold)
    consts = separation_constants(y_size, delta, threshold)
    bound = consts["B"] if B is None else float(B)
    prompts = PromptSpace(["x0"])
    responses = ResponseSpace([f"v{k}" for k in range(y_size)])
    feats = [vecs[None, :, :]]
    star = 0
    base = LinearSoftmaxModel(prompts, responses, feats, [vecs[star].copy()], bound)
    cls = LinearSoftmaxClass(prompts, responses, feats, bound)
    params = dict(consts, d=d, y_size=y_size, B=bound, threshold=threshold, star=star)
    inst = SharpeningInstance("softmax_separation", PromptDistribution.uniform(prompts), base, cls, params)
    return _finish(inst, 0.0, theta_star=vecs[star].tolist())


# ---------------------------------------------------------------------------
# max-cut hardness


def _feature_index(H: int):
    single = lambda i: i - 1  # noqa: E731
    pair = lambda i, j: H + (i - 1) * H + (j - 1)  # noqa: E731
    triple = lambda i, j, k: H + H * H + ((i - 1) * H + (j - 1)) * H + (k - 1)  # noqa: E731
    return single, pair, triple


def monomial_features(H: int, h: int) -> np.ndarray:
    """Layer-h features over all prefixes in {-1,1}^h (lexicographic, -1 first).

    Coordinates are singles, then pairs, then triples, each in row-major
    order over 1-based positions; positions beyond h contribute 0.
    """
    prefixes = np.array(list(itertools.product((-1.0, 1.0), repeat=h)))
    Y = np.zeros((len(prefixes), H))
    Y[:, :h] = prefixes
    pairs = np.einsum("ni,nj->nij", Y, Y).reshape(len(Y), -1)
    triples = np.einsum("ni,nj,nk->nijk", Y, Y, Y).reshape(len(Y), -1)
    return np.concatenate([Y, pairs, triples], axis=1)


def maxcut_hardness(n_vertices: int, edges) -> tuple[SharpeningInstance, "CutDecoder"]:
    edges = sorted({tuple(sorted((int(a), int(b)))) for a, b in edges})
    if any(a == b or not (0 <= a < n_vertices and 0 <= b < n_vertices) for a, b in edges):
        raise DomainError("edges must join distinct vertices in range")
    if len(edges) % 2 == 0:
        raise DomainError("the reduction needs an odd number of edges")
    H = n_vertices + 2
    d = H + H * H + H**3
    _, pair, triple = _feature_index(H)
    J = np.zeros((n_vertices, n_vertices))
    for a, b in edges:
        J[a, b] = J[b, a] = -1.0
    thetas = [np.zeros(d) for _ in range(H)]
    for i in range(n_vertices):
        for j in range(n_vertices):
            if J[i, j]:
                thetas[H - 2][triple(i + 1, j + 1, H - 1)] = J[i, j]
    B = float(H)
    thetas[H - 1][pair(H - 1, H)] = B / 2
    thetas[H - 1][H - 1] = B / 2
    feats = [monomial_features(H, h)[None] for h in range(1, H + 1)]
    prompts = PromptSpace(["_"])
    responses = ResponseSpace.sequences((-1, 1), H)
    base = LinearSoftmaxModel(prompts, responses, feats, thetas, B, feature_bound=None)
    cls = LinearSoftmaxClass(prompts, responses, feats, B, feature_bound=None)
    best = brute_force_maxcut(n_vertices, edges)
    inst = SharpeningInstance("maxcut_hardness", PromptDistribution.uniform(prompts), base, cls,
                              {"n_vertices": n_vertices, "edges": [list(e) for e in edges], "B": B})
    return _finish(inst, 0.0, max_cut=best), CutDecoder(n_vertices, edges)


def cut_value(edges, side) -> int:
    return sum(1 for a, b in edges if side[a] != side[b])


def brute_force_maxcut(n_vertices: int, edges) -> int:
    best = 0
    for side in itertools.product((0, 1), repeat=n_vertices):
        best = max(best, cut_value(edges, side))
    return best


@dataclass
class CutDecoder:
    n_vertices: int
    edges: list

    def partition(self, seq) -> tuple[int, ...]:
        return tuple(int(t > 0) for t in seq[: self.n_vertices])

    def __call__(self, seq) -> int:
        return cut_value(self.edges, self.partition(seq))


# ---------------------------------------------------------------------------
# representational example


def representational_example(n: int = 100, B: float | None = None) -> SharpeningInstance:
    """Two-step softmax whose sequence argmax (2, 1) no model in the class can sharpen past 1/2.

    Tokens are the integers 1..n.
    """
    if n < 8:
        raise DomainError("n must be >= 8")
    B = math.log(n) if B is None else float(B)
    f1 = np.zeros((1, n, 2))
    f1[0, :2, 0] = 1.0
    f1[0, 2:, 1] = 1.0
    f2 = np.zeros((1, n * n, 2))
    row = 1 * n  # prefix token 2 (index 1)
    f2[0, row, 0] = 1.0
    f2[0, row + 1: row + n, 1] = 1.0
    theta = [np.array([B, 0.0]), np.array([B, 0.0])]
    prompts = PromptSpace(["_"])
    responses = ResponseSpace.sequences(range(1, n + 1), 2)
    base = LinearSoftmaxModel(prompts, responses, [f1, f2], theta, B)
    cls = LinearSoftmaxClass(prompts, responses, [f1, f2], B)
    inst = SharpeningInstance("representational_example", PromptDistribution.uniform(prompts), base, cls,
                              {"n": n, "B": B})
    return _finish(inst, 0.0, sequence_argmax=[2, 1])


# ---------------------------------------------------------------------------
# random tabular


def row_margin(p: np.ndarray) -> float:
    top = p.max()
    rest = p[p < top]
    return math.inf if rest.size == 0 else top / rest.max() - 1.0


def random_tabular_instance(n_prompts: int, n_responses: int, rng: RngStream, margin_range=None,
                            c_cov_range=None, retry_cap: int = 10_000) -> SharpeningInstance:
    """Dirichlet rows, rejection-sampled row by row until each satisfies the targets.

    Each row meeting the margin and inverse-top-mass ranges implies the
    instance's margin_max and C_cov (uniform prompts) lie in range. The
    model class holds the cyclic label rotations of every row.
    """
    if n_prompts < 1 or n_responses < 2:
        raise DomainError("need at least one prompt and two responses")
    lo_m, hi_m = margin_range if margin_range is not None else (0.0, math.inf)
    lo_c, hi_c = c_cov_range if c_cov_range is not None else (1.0, math.inf)
    if lo_m > hi_m or lo_c > hi_c or hi_c < 1.0 or lo_c > n_responses:
        raise DomainError("infeasible target ranges")
    rows = []
    for _ in range(n_prompts):
        best, best_gap = None, math.inf
        for _ in range(retry_cap):
            alpha = math.exp(rng.random() * math.log(100.0)) / 10.0  # log-uniform in [0.1, 10]
            p = rng.dirichlet(np.full(n_responses, alpha))
            if p.min() <= 0:
                continue
            m, c = row_margin(p), 1.0 / p.max()
            gap = max(lo_m - m, m - hi_m, 0.0) + max(lo_c - c, c - hi_c, 0.0)
            if gap == 0.0:
                best = p
                break
            if gap < best_gap:
                best_gap = gap
        if best is None:
            raise CapacityError(f"no row met the targets within {retry_cap} draws (nearest gap {best_gap:.4g})")
        rows.append(best)
    prompts = PromptSpace([f"x{i}" for i in range(n_prompts)])
    responses = ResponseSpace([f"y{j}" for j in range(n_responses)])
    P = np.stack(rows)
    base = TabularModel(prompts, responses, P)
    cls = ProductClass(prompts, responses, [np.stack([np.roll(r, k) for k in range(n_responses)]) for r in P])
    inst = SharpeningInstance("random_tabular", PromptDistribution.uniform(prompts), base, cls,
                              {"n_prompts": n_prompts, "n_responses": n_responses,
                               "margin_range": [lo_m, hi_m], "c_cov_range": [lo_c, hi_c]})
    return _finish(inst, 0.0, log_class_size=cls.log_size)
