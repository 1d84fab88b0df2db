"""Reproducible random streams and the parallel chunk engine.

A stream is identified by ``(seed, stream_id)``; chunk ``k`` of a stream
draws from ``Philox(SeedSequence(seed, spawn_key=stream_id + (k,)))``.
Work is split into fixed-size chunks whose results are merged in chunk
order, so estimates do not depend on the number of worker threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

CHUNK_SIZE = 8192
_MASK64 = (1 << 64) - 1
_threads = int(os.environ.get("STABLEPOT_THREADS", "1"))


def set_threads(k: int) -> None:
    """Default worker count for chunked Monte Carlo."""
    global _threads
    if k < 1:
        raise ValidationError("thread count must be positive")
    _threads = int(k)


def get_threads() -> int:
    return _threads


def _as_key(stream_id) -> tuple:
    if isinstance(stream_id, (tuple, list)):
        return tuple(int(s) & _MASK64 for s in stream_id)
    return (int(stream_id) & _MASK64,)


@dataclass(frozen=True)
class RngStream:
    """Addressable random stream; ``child`` derives independent sub-streams."""

    seed: int
    stream_id: tuple = (0,)

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0 or self.seed > _MASK64:
            raise ValidationError("seed must be an integer in [0, 2^64)")
        object.__setattr__(self, "stream_id", _as_key(self.stream_id))

    def child(self, *ids) -> "RngStream":
        return RngStream(self.seed, self.stream_id + _as_key(ids))

    def generator(self, chunk: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.stream_id + (int(chunk),))
        return np.random.Generator(np.random.Philox(ss))


def as_stream(rng, default_id=0) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng), (default_id,))
    raise ValidationError("rng must be an RngStream or an integer seed")


def chunk_sizes(n_samples: int, chunk_size: int = CHUNK_SIZE) -> list[int]:
    full, rest = divmod(int(n_samples), chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def map_chunks(fn, stream: RngStream, n_samples: int, threads: int | None = None,
               chunk_size: int = CHUNK_SIZE, first_chunk: int = 0) -> list:
    """Run ``fn(generator, count, chunk_index)`` over all chunks; results in chunk order.

    ``first_chunk`` offsets the chunk indices, so a follow-up call extends a
    previous run with fresh draws from the same stream.
    """
    sizes = chunk_sizes(n_samples, chunk_size)
    k = _threads if threads is None else threads
    tasks = [(stream.generator(first_chunk + i), m, first_chunk + i) for i, m in enumerate(sizes)]
    if k <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ThreadPoolExecutor(max_workers=k) as pool:
        return list(pool.map(lambda t: fn(*t), tasks))


@dataclass
class RunningMoments:
    """Count, mean and central moment sums, merged pairwise in a fixed order."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    m4: float = 0.0

    @classmethod
    def of(cls, values) -> "RunningMoments":
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            return cls()
        mu = float(v.mean())
        d = v - mu
        return cls(v.size, mu, float(d @ d), float(np.sum(d**3)), float(np.sum(d**4)))

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        if other.count == 0:
            return RunningMoments(self.count, self.mean, self.m2, self.m3, self.m4)
        if self.count == 0:
            return RunningMoments(other.count, other.mean, other.m2, other.m3, other.m4)
        na, nb = self.count, other.count
        n = na + nb
        delta = other.mean - self.mean
        mean = self.mean + delta * nb / n
        m2 = self.m2 + other.m2 + delta**2 * na * nb / n
        m3 = (self.m3 + other.m3 + delta**3 * na * nb * (na - nb) / n**2
              + 3 * delta * (na * other.m2 - nb * self.m2) / n)
        m4 = (self.m4 + other.m4
              + delta**4 * na * nb * (na * na - na * nb + nb * nb) / n**3
              + 6 * delta**2 * (na * na * other.m2 + nb * nb * self.m2) / n**2
              + 4 * delta * (na * other.m3 - nb * self.m3) / n)
        return RunningMoments(n, mean, m2, m3, m4)

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance / self.count) if self.count > 0 else math.inf

    @property
    def kurtosis_spread(self) -> float:
        """Relative standard error of the variance estimate, ``sqrt((m4 / s^4 - 1) / N)``."""
        if self.count < 2 or self.m2 <= 0:
            return 0.0
        s4 = (self.m2 / self.count) ** 2
        return math.sqrt(max(self.m4 / self.count / s4 - 1.0, 0.0) / self.count)


def merge_all(parts) -> RunningMoments:
    total = RunningMoments()
    for p in parts:
        total = total.merge(p)
    return total
