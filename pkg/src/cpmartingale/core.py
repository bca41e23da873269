"""Shared types: score buffer, prefix moments, seeded randomness, log-domain helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp  # noqa: F401  (re-exported)
from sortedcontainers import SortedList


class ContractError(ValueError):
    """A caller broke an operation's precondition."""


class InputError(ValueError):
    """Rejected input data (non-finite values, malformed rows)."""


class ConfigError(ValueError):
    """Invalid experiment or CLI configuration."""


class CalibrationError(ValueError):
    """A betting density could not be calibrated or loaded."""


def as_observation(values, dim: int | None = None) -> np.ndarray:
    """Coerce one stream element to a finite 1-D float vector."""
    z = np.atleast_1d(np.asarray(values, dtype=float))
    if z.ndim != 1:
        raise InputError(f"observation must be a vector, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InputError("observation contains non-finite values")
    if dim is not None and z.shape[0] != dim:
        raise ContractError(f"dimension mismatch: expected {dim}, got {z.shape[0]}")
    return z


@dataclass(frozen=True)
class StreamMeta:
    length: int
    theta: float = math.inf

    def __post_init__(self):
        if self.length < 1:
            raise ContractError("stream length must be positive")
        if not (self.theta == math.inf or 1 <= self.theta <= self.length):
            raise ContractError("theta must lie in [1, length] or be infinite")


class ScoreBuffer:
    """Growing multiset of non-conformity scores with O(log n) rank queries."""

    def __init__(self, scores: Sequence[float] = ()):
        self._sorted = SortedList()
        for a in scores:
            self.insert(a)

    def __len__(self) -> int:
        return len(self._sorted)

    @property
    def n(self) -> int:
        return len(self._sorted)

    def insert(self, alpha: float) -> "ScoreBuffer":
        alpha = float(alpha)
        if not math.isfinite(alpha):
            raise InputError(f"non-finite score {alpha!r}")
        self._sorted.add(alpha)
        return self

    def count_greater(self, alpha: float) -> int:
        return len(self._sorted) - self._sorted.bisect_right(alpha)

    def count_equal(self, alpha: float) -> int:
        return self._sorted.bisect_right(alpha) - self._sorted.bisect_left(alpha)

    def count_less(self, alpha: float) -> int:
        return self._sorted.bisect_left(alpha)

    def rank_counts(self, alpha: float) -> tuple[int, int]:
        """Return ``(#scores > alpha, #scores == alpha)``."""
        lo = self._sorted.bisect_left(alpha)
        hi = self._sorted.bisect_right(alpha)
        return len(self._sorted) - hi, hi - lo


def insert_score(buffer: ScoreBuffer, alpha: float) -> ScoreBuffer:
    return buffer.insert(alpha)


def rank_counts(buffer: ScoreBuffer, alpha: float) -> tuple[int, int]:
    return buffer.rank_counts(alpha)


class PrefixMoments:
    """Running sums of z and z**2 over every prefix of a 1-D stream.

    Index convention is 1-based and inclusive, matching segment notation
    ``[from, to]``; ``s1[j]`` is the sum of the first ``j`` observations.
    """

    def __init__(self, values: Sequence[float] = ()):
        self._s1 = [0.0]
        self._s2 = [0.0]
        for z in values:
            self.append(z)

    @property
    def n(self) -> int:
        return len(self._s1) - 1

    def append(self, z: float) -> None:
        z = float(z)
        if not math.isfinite(z):
            raise InputError(f"non-finite observation {z!r}")
        self._s1.append(self._s1[-1] + z)
        self._s2.append(self._s2[-1] + z * z)

    def _check(self, start: int, stop: int) -> bool:
        if start > stop:
            if start < 1 or stop < 0 or start > self.n + 1:
                raise ContractError(f"bad empty range [{start}, {stop}]")
            return False
        if start < 1 or stop > self.n:
            raise ContractError(f"range [{start}, {stop}] outside [1, {self.n}]")
        return True

    def segment_sums(self, start: int, stop: int) -> tuple[int, float, float]:
        """Length, sum and sum of squares of ``z[start..stop]``."""
        if not self._check(start, stop):
            return 0, 0.0, 0.0
        return (
            stop - start + 1,
            self._s1[stop] - self._s1[start - 1],
            self._s2[stop] - self._s2[start - 1],
        )

    def mean(self, start: int, stop: int) -> float:
        length, s1, _ = self.segment_sums(start, stop)
        return s1 / length if length else 0.0

    def meansq(self, start: int, stop: int) -> float:
        length, _, s2 = self.segment_sums(start, stop)
        return s2 / length if length else 0.0

    @property
    def s1(self) -> np.ndarray:
        return np.asarray(self._s1)

    @property
    def s2(self) -> np.ndarray:
        return np.asarray(self._s2)


def prefix_mean(moments: PrefixMoments, start: int, stop: int) -> float:
    return moments.mean(start, stop)


def prefix_meansq(moments: PrefixMoments, start: int, stop: int) -> float:
    return moments.meansq(start, stop)


class RngHandle:
    """Seeded random source; replication ``i`` gets an independent substream.

    Substreams come from :class:`numpy.random.SeedSequence` spawn keys, so
    results never depend on the order in which replications are executed.
    """

    def __init__(self, seed: int = 0, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self.generator = np.random.default_rng(
            np.random.SeedSequence(self.seed, spawn_key=self.key)
        )

    def substream(self, *key: int) -> "RngHandle":
        return RngHandle(self.seed, self.key + tuple(key))

    def uniform(self) -> float:
        return float(self.generator.random())

    def __getattr__(self, name):
        # Delegate sampling methods (normal, random, permutation, ...).
        return getattr(self.generator, name)


def log_add(a: float, b: float) -> float:
    """``log(exp(a) + exp(b))`` without overflow; accepts ``-inf``."""
    if a < b:
        a, b = b, a
    if a == -math.inf:
        return -math.inf
    return a + math.log1p(math.exp(b - a))
