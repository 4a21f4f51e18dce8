"""Deterministic chunked Monte Carlo.

A budget of ``N`` samples is cut into chunks of fixed size; chunk ``k`` draws
from its own generator keyed by ``(seed, k)``.  Chunk statistics are merged in
index order, so results depend only on ``(seed, budget, chunk_size)`` and not
on how many workers ran the chunks.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidInputError

DEFAULT_CHUNK = 1 << 16

__all__ = ["DEFAULT_CHUNK", "RunningStats", "chunked_mean", "substream", "uniform_ball", "sphere_samples"]


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


@dataclass
class RunningStats:
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, values: np.ndarray) -> "RunningStats":
        v = np.asarray(values, dtype=float).ravel()
        if v.size == 0:
            return cls()
        m = float(np.mean(v))
        return cls(v.size, m, float(np.sum((v - m) ** 2)))

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.count == 0:
            return self
        if self.count == 0:
            return RunningStats(other.count, other.mean, other.m2)
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return RunningStats(n, mean, m2)

    @property
    def std_error(self) -> float:
        if self.count < 2:
            return 0.0
        return math.sqrt(self.m2 / (self.count - 1) / self.count)


def chunked_mean(fn: Callable[[np.random.Generator, int], np.ndarray], budget: int, seed: int,
                 chunk_size: int = DEFAULT_CHUNK, threads: int = 1, key: tuple = ()) -> RunningStats:
    """Mean of ``fn(rng, size)`` over ``budget`` draws split into keyed chunks."""
    if budget < 1:
        raise InvalidInputError("budget must be positive")
    sizes = [chunk_size] * (budget // chunk_size)
    if budget % chunk_size:
        sizes.append(budget % chunk_size)

    def work(k):
        return RunningStats.of(fn(substream(seed, *key, k), sizes[k]))

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(k) for k in range(len(sizes))]
    total = RunningStats()
    for p in parts:
        total = total.merge(p)
    return total


def uniform_ball(rng: np.random.Generator, size: int, n: int) -> np.ndarray:
    """Uniform points in the unit ball of ``R^n``."""
    g = rng.standard_normal((size, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    rad = rng.random(size) ** (1.0 / n)
    return g * rad[:, None]


def sphere_samples(n: int, count: int = 4096) -> np.ndarray:
    """Deterministic directions: equally spaced angles (n=2) or a Fibonacci sphere (n=3)."""
    if n == 2:
        ang = 2.0 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if n == 3:
        i = np.arange(count) + 0.5
        z = 1.0 - 2.0 * i / count
        rho = np.sqrt(1.0 - z * z)
        phi = np.pi * (3.0 - math.sqrt(5.0)) * i
        return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    raise InvalidInputError("sphere sampling is implemented for n = 2 and 3")
