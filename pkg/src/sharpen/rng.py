"""Counter-based, splittable random streams.

Every stream is a Philox generator keyed by ``(seed, stream_id)``. Two streams
with the same key replay identical draws; different stream ids give
statistically independent sequences, so prompts, seeds and workers can each
own a stream without coordination.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix(seed: int, stream: int) -> np.ndarray:
    ss = np.random.SeedSequence([seed & _MASK64, stream & _MASK64])
    return ss.generate_state(2, dtype=np.uint64)


@dataclass
class RngStream:
    seed: int
    stream: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64 and 0 <= self.stream <= _MASK64):
            raise ValueError("seed and stream id must be 64-bit unsigned integers")
        self._gen = np.random.Generator(np.random.Philox(key=_mix(self.seed, self.stream)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, k: int) -> "RngStream":
        """Independent sub-stream number ``k`` of this stream."""
        derived = int(np.random.SeedSequence([self.stream, k, 0x5EED]).generate_state(1, np.uint64)[0])
        return RngStream(self.seed, derived)

    def split(self, n: int) -> list["RngStream"]:
        return [self.child(k) for k in range(n)]

    # thin pass-throughs used throughout the package
    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def dirichlet(self, alpha, size=None):
        return self._gen.dirichlet(alpha, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def permutation(self, x):
        return self._gen.permutation(x)

    def choice(self, a, size=None, replace=True, p=None):
        return self._gen.choice(a, size=size, replace=replace, p=p)


def as_stream(rng: RngStream | int | None) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    return RngStream(0 if rng is None else int(rng))
