"""Prompt/response spaces and conditional models with exact log-probabilities.

All models expose a dense ``log_table()`` of shape ``(|X|, |Y|)`` with
responses enumerated in canonical order (list order for atomic spaces,
lexicographic token order for sequence spaces). Zero probabilities are
``-inf``; nothing in this module underflows silently.
"""
from __future__ import annotations

import itertools
import math
from abc import ABC, abstractmethod
from typing import Hashable, Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import CapacityError, DomainError, ValidationError
from .rng import RngStream

TIE_TOL = 1e-12
LOG_FLOOR = -745.0
ROW_TOL = 1e-9
MAX_ENUM = 1 << 24


class PromptSpace:
    def __init__(self, prompts: Iterable[Hashable]):
        self.items = tuple(prompts)
        if not self.items:
            raise DomainError("prompt space must be non-empty")
        self._index = {p: i for i, p in enumerate(self.items)}
        if len(self._index) != len(self.items):
            raise DomainError("prompt identifiers must be unique")

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __eq__(self, other):
        return isinstance(other, PromptSpace) and self.items == other.items

    def index(self, x) -> int:
        try:
            return self._index[x]
        except (KeyError, TypeError):
            raise DomainError(f"unknown prompt {x!r}") from None


class ResponseSpace:
    """Either a finite list of atomic responses or all sequences in V^H."""

    def __init__(self, items: Iterable[Hashable] | None = None, *, vocab=None, horizon=None):
        if vocab is not None:
            self.vocab = tuple(vocab)
            self.horizon = int(horizon)
            if not self.vocab or self.horizon < 1:
                raise DomainError("sequence space needs a non-empty vocabulary and horizon >= 1")
            self._tok = {v: i for i, v in enumerate(self.vocab)}
            if len(self._tok) != len(self.vocab):
                raise DomainError("vocabulary tokens must be unique")
            self.size = len(self.vocab) ** self.horizon
            self._items = None
        else:
            self.vocab = None
            self.horizon = None
            self._items = tuple(items)
            if not self._items:
                raise DomainError("response space must be non-empty")
            self._index = {y: i for i, y in enumerate(self._items)}
            if len(self._index) != len(self._items):
                raise DomainError("response identifiers must be unique")
            self.size = len(self._items)

    @classmethod
    def sequences(cls, vocab: Sequence[Hashable], horizon: int) -> "ResponseSpace":
        return cls(vocab=vocab, horizon=horizon)

    @property
    def is_sequence(self) -> bool:
        return self.vocab is not None

    def __len__(self):
        return self.size

    def __eq__(self, other):
        if not isinstance(other, ResponseSpace):
            return False
        if self.is_sequence:
            return other.is_sequence and self.vocab == other.vocab and self.horizon == other.horizon
        return not other.is_sequence and self._items == other._items

    @property
    def items(self) -> tuple:
        if self._items is None:
            if self.size > MAX_ENUM:
                raise CapacityError(f"|V|^H = {self.size} exceeds enumeration cap {MAX_ENUM}")
            self._items = tuple(itertools.product(self.vocab, repeat=self.horizon))
        return self._items

    def index(self, y) -> int:
        if not self.is_sequence:
            try:
                return self._index[y]
            except (KeyError, TypeError):
                raise DomainError(f"unknown response {y!r}") from None
        try:
            toks = tuple(y)
        except TypeError:
            raise DomainError(f"sequence response expected, got {y!r}") from None
        if len(toks) != self.horizon:
            raise DomainError(f"response {y!r} does not have length {self.horizon}")
        i = 0
        V = len(self.vocab)
        for t in toks:
            if t not in self._tok:
                raise DomainError(f"unknown token {t!r}")
            i = i * V + self._tok[t]
        return i

    def item(self, i: int):
        if not self.is_sequence:
            return self._items[i]
        V = len(self.vocab)
        toks = []
        for _ in range(self.horizon):
            i, r = divmod(i, V)
            toks.append(self.vocab[r])
        return tuple(reversed(toks))

    def length(self, y) -> int:
        """Token length used by the length-normalized reward."""
        if self.is_sequence:
            return self.horizon
        return len(y) if isinstance(y, (str, tuple, list)) and len(y) > 0 else 1


class PromptDistribution:
    def __init__(self, prompts: PromptSpace, weights):
        self.prompts = prompts
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(prompts),) or np.any(w < 0) or abs(w.sum() - 1.0) > ROW_TOL:
            raise ValidationError("prompt weights must be nonnegative and sum to 1")
        self.weights = w

    @classmethod
    def from_dict(cls, weights: dict) -> "PromptDistribution":
        space = PromptSpace(weights.keys())
        return cls(space, [weights[p] for p in space])

    @classmethod
    def uniform(cls, prompts: PromptSpace) -> "PromptDistribution":
        return cls(prompts, np.full(len(prompts), 1.0 / len(prompts)))

    @classmethod
    def point_mass(cls, prompts: PromptSpace, x) -> "PromptDistribution":
        w = np.zeros(len(prompts))
        w[prompts.index(x)] = 1.0
        return cls(prompts, w)

    def as_dict(self) -> dict:
        return {p: float(w) for p, w in zip(self.prompts, self.weights)}

    def support(self) -> list[int]:
        return [i for i, w in enumerate(self.weights) if w > 0]

    def sample_index(self, rng: RngStream) -> int:
        return draw_index(self.weights, rng.random())

    def sample(self, rng: RngStream):
        return self.prompts.items[self.sample_index(rng)]


def _safe_log(p):
    with np.errstate(divide="ignore"):
        return np.log(p)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Log-softmax that keeps full relative precision for near-certain entries.

    The normalizer is ``max + log1p(sum of the other exp terms)``, so a
    log-probability such as ``-4e-18`` is not rounded to zero.
    """
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    first = np.argmax(z, axis=axis)
    np.put_along_axis(e, np.expand_dims(first, axis), 0.0, axis=axis)
    return z - np.log1p(np.sum(e, axis=axis, keepdims=True))


def draw_index(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw; zero-probability entries are never returned."""
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    i = int(np.searchsorted(cdf, u, side="right"))
    return min(i, len(probs) - 1)


def cdf_of(probs: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(np.asarray(probs, dtype=float))
    cdf /= cdf[-1]
    cdf[-1] = 1.0
    return cdf


class ConditionalModel(ABC):
    prompts: PromptSpace
    responses: ResponseSpace

    @abstractmethod
    def log_table(self) -> np.ndarray:
        """Dense ``(|X|, |Y|)`` array of log-probabilities."""

    def prob_table(self) -> np.ndarray:
        return np.exp(self.log_table())

    def log_row(self, x) -> np.ndarray:
        return self.log_table()[self.prompts.index(x)]

    def row(self, x) -> np.ndarray:
        return np.exp(self.log_row(x))

    def logprob(self, x, y) -> float:
        return float(self.log_table()[self.prompts.index(x), self.responses.index(y)])

    def sample_index(self, xi: int, rng: RngStream) -> int:
        return draw_index(np.exp(self.log_table()[xi]), rng.random())

    def sample(self, x, rng: RngStream):
        return self.responses.item(self.sample_index(self.prompts.index(x), rng))

    def same_spaces(self, other: "ConditionalModel") -> bool:
        return self.prompts == other.prompts and self.responses == other.responses


def check_rows(p: np.ndarray, what="row"):
    if np.any(~np.isfinite(p)) or np.any(p < 0):
        raise ValidationError(f"{what} probabilities must be finite and nonnegative")
    s = p.sum(axis=-1)
    if np.any(np.abs(s - 1.0) > ROW_TOL):
        raise ValidationError(f"each {what} must sum to 1 within {ROW_TOL}")


class TabularModel(ConditionalModel):
    def __init__(self, prompts: PromptSpace, responses: ResponseSpace, probs):
        self.prompts = prompts
        self.responses = responses
        p = np.array(probs, dtype=float)
        if p.shape != (len(prompts), len(responses)):
            raise ValidationError(f"table shape {p.shape} != {(len(prompts), len(responses))}")
        check_rows(p)
        self.probs = p
        self._log = _safe_log(p)

    @classmethod
    def from_log_table(cls, prompts, responses, log_table) -> "TabularModel":
        lt = np.asarray(log_table, dtype=float)
        lt = lt - logsumexp(lt, axis=1, keepdims=True)
        obj = cls.__new__(cls)
        obj.prompts, obj.responses = prompts, responses
        obj.probs = np.exp(lt)
        check_rows(obj.probs)
        obj._log = lt
        return obj

    @classmethod
    def from_rows(cls, rows: dict, responses: Sequence | ResponseSpace) -> "TabularModel":
        rs = responses if isinstance(responses, ResponseSpace) else ResponseSpace(responses)
        ps = PromptSpace(rows.keys())
        return cls(ps, rs, [rows[x] for x in ps])

    @classmethod
    def single(cls, probs, prompt="x0", responses=None) -> "TabularModel":
        probs = list(probs)
        if responses is None:
            responses = [f"y{i}" for i in range(len(probs))]
        return cls(PromptSpace([prompt]), ResponseSpace(responses), [probs])

    def log_table(self):
        return self._log

    def prob_table(self):
        return self.probs


class _Sequential(ConditionalModel):
    """Shared machinery for models over V^H defined by per-step conditionals."""

    @abstractmethod
    def step_log_table(self, h: int) -> np.ndarray:
        """Log conditionals at step ``h`` (0-based): shape ``(|X|, |V|^h, |V|)``."""

    def log_table(self):
        if getattr(self, "_full", None) is None:
            rs = self.responses
            if rs.size > MAX_ENUM:
                raise CapacityError(f"|V|^H = {rs.size} exceeds enumeration cap {MAX_ENUM}")
            V, H, X = len(rs.vocab), rs.horizon, len(self.prompts)
            total = np.zeros((X, rs.size))
            for h in range(H):
                step = self.step_log_table(h).reshape(X, -1)
                total += np.repeat(step, V ** (H - h - 1), axis=1)
            self._full = total
        return self._full

    def relative_log_table(self) -> np.ndarray:
        """Log table shifted by a per-layer constant so near-maximal entries sit near 0.

        Differences between sequences are preserved exactly, and gaps far
        below the float spacing of the full log-probabilities stay visible.
        """
        rs = self.responses
        if rs.size > MAX_ENUM:
            raise CapacityError(f"|V|^H = {rs.size} exceeds enumeration cap {MAX_ENUM}")
        V, H, X = len(rs.vocab), rs.horizon, len(self.prompts)
        total = np.zeros((X, rs.size))
        for h in range(H):
            step = self.step_log_table(h).reshape(X, -1)
            step = step - step.max(axis=1, keepdims=True)
            total += np.repeat(step, V ** (H - h - 1), axis=1)
        return total

    def logprob(self, x, y) -> float:
        xi = self.prompts.index(x)
        yi = self.responses.index(y)
        V, H = len(self.responses.vocab), self.responses.horizon
        total = 0.0
        for h in range(H):
            prefix = yi // V ** (H - h)
            tok = (yi // V ** (H - h - 1)) % V
            total += float(self.step_log_table(h)[xi, prefix, tok])
        return total

    def sample_index(self, xi: int, rng: RngStream) -> int:
        V = len(self.responses.vocab)
        prefix = 0
        for h in range(self.responses.horizon):
            tok = draw_index(np.exp(self.step_log_table(h)[xi, prefix]), rng.random())
            prefix = prefix * V + tok
        return prefix


class AutoregressiveTabularModel(_Sequential):
    def __init__(self, prompts: PromptSpace, vocab: Sequence, conditionals: Sequence[np.ndarray]):
        self.prompts = prompts
        self.responses = ResponseSpace.sequences(vocab, len(conditionals))
        V, X = len(self.responses.vocab), len(prompts)
        self.conditionals = []
        for h, c in enumerate(conditionals):
            c = np.array(c, dtype=float)
            if c.shape != (X, V**h, V):
                raise ValidationError(f"step {h} conditional has shape {c.shape}, expected {(X, V**h, V)}")
            check_rows(c, "conditional row")
            self.conditionals.append(c)
        self._logs = [_safe_log(c) for c in self.conditionals]
        self._full = None

    def step_log_table(self, h):
        return self._logs[h]


class LinearSoftmaxModel(_Sequential):
    """pi_theta(y | x) proportional to exp(<phi(x, y), theta>).

    With an atomic response space there is a single layer and
    ``features[0]`` has shape ``(|X|, |Y|, d)``. With a sequence space, layer
    ``h`` scores the next token from ``features[h]`` of shape
    ``(|X|, |V|^(h+1), d)`` indexed by the lexicographic prefix ``y_{1:h+1}``.
    Per-layer normalizers are computed on first use and memoized.
    """

    def __init__(self, prompts: PromptSpace, responses: ResponseSpace, features, theta, bound: float,
                 feature_bound: float | None = 1.0):
        self.prompts = prompts
        self.responses = responses
        self.features = [np.asarray(f, dtype=float) for f in features]
        self.theta = [np.array(t, dtype=float) for t in theta]
        self.bound = float(bound)
        self.feature_bound = feature_bound
        layers = responses.horizon if responses.is_sequence else 1
        if len(self.features) != layers or len(self.theta) != layers:
            raise ValidationError(f"expected {layers} feature/parameter layers")
        X = len(prompts)
        for h, (f, t) in enumerate(zip(self.features, self.theta)):
            n_rows = len(responses.vocab) ** (h + 1) if responses.is_sequence else len(responses)
            if f.ndim != 3 or f.shape[:2] != (X, n_rows):
                raise ValidationError(f"layer {h} features have shape {f.shape}")
            if t.shape != (f.shape[2],):
                raise ValidationError(f"layer {h} parameter has shape {t.shape}, features dim {f.shape[2]}")
            if np.linalg.norm(t) > self.bound * (1 + 1e-12):
                raise ValidationError(f"||theta_{h}|| = {np.linalg.norm(t):.6g} exceeds bound {self.bound}")
            if feature_bound is not None and np.max(np.linalg.norm(f, axis=-1)) > feature_bound + 1e-12:
                raise ValidationError(f"layer {h} features exceed norm {feature_bound}")
        self._steps: dict[int, np.ndarray] = {}
        self._full = None

    @property
    def dim(self) -> int:
        return self.features[0].shape[2]

    def with_theta(self, theta, bound: float | None = None) -> "LinearSoftmaxModel":
        return LinearSoftmaxModel(self.prompts, self.responses, self.features, theta,
                                  self.bound if bound is None else bound, self.feature_bound)

    def step_log_table(self, h):
        if h not in self._steps:
            logits = self.features[h] @ self.theta[h]
            if self.responses.is_sequence:
                V = len(self.responses.vocab)
                logits = logits.reshape(len(self.prompts), -1, V)
            else:
                logits = logits.reshape(len(self.prompts), 1, -1)
            self._steps[h] = log_softmax(logits)
        return self._steps[h]

    def log_table(self):
        if not self.responses.is_sequence:
            return self.step_log_table(0)[:, 0, :]
        return super().log_table()

    def logprob(self, x, y):
        if not self.responses.is_sequence:
            return ConditionalModel.logprob(self, x, y)
        return super().logprob(x, y)

    def sample_index(self, xi, rng):
        if not self.responses.is_sequence:
            return ConditionalModel.sample_index(self, xi, rng)
        return super().sample_index(xi, rng)

    def grad_logprob(self, xi: int, yi: int) -> list[np.ndarray]:
        """Per-layer gradient of log pi_theta(y | x) with respect to theta."""
        if not self.responses.is_sequence:
            p = np.exp(self.step_log_table(0)[xi, 0])
            f = self.features[0][xi]
            return [f[yi] - p @ f]
        V, H = len(self.responses.vocab), self.responses.horizon
        grads = []
        for h in range(H):
            prefix = yi // V ** (H - h)
            full = yi // V ** (H - h - 1)
            p = np.exp(self.step_log_table(h)[xi, prefix])
            block = self.features[h][xi, prefix * V:(prefix + 1) * V]
            grads.append(self.features[h][xi, full] - p @ block)
        return grads


def softmax_eval(model: LinearSoftmaxModel, x) -> np.ndarray:
    """Exact normalized distribution over the enumerated response space."""
    for h, t in enumerate(model.theta):
        if np.linalg.norm(t) > model.bound * (1 + 1e-12):
            raise ValidationError(f"layer {h} parameter violates the norm bound")
    return model.row(x)


def logprob(model: ConditionalModel, x, y) -> float:
    return model.logprob(x, y)


def sample(model: ConditionalModel, x, rng: RngStream):
    return model.sample(x, rng)


def as_tabular(model: ConditionalModel) -> TabularModel:
    if isinstance(model, TabularModel):
        return model
    return TabularModel.from_log_table(model.prompts, model.responses, model.log_table())


def log_floor(v):
    """Clamp -inf to the finite floor where a loss needs a number."""
    return np.maximum(v, LOG_FLOOR)


def is_close_log(a: float, b: float, tol: float = TIE_TOL) -> bool:
    if a == b:
        return True
    return math.isfinite(a) and math.isfinite(b) and abs(a - b) <= tol
