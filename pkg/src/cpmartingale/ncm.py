"""Non-conformity measures scored against a fixed training set."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import ConfigError, ContractError, RngHandle, as_observation

NCM_KINDS = ("knn", "lr", "mean-distance")


class TrainingSet:
    """Immutable reference sample for inductive scoring.

    Shuffled once on construction when an ``rng`` is supplied.
    """

    def __init__(self, observations, rng: RngHandle | None = None):
        arr = np.asarray(observations, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ContractError("training set needs at least one observation")
        if not np.all(np.isfinite(arr)):
            raise ContractError("training set contains non-finite values")
        if rng is not None:
            arr = arr[rng.permutation(arr.shape[0])]
        arr.setflags(write=False)
        self.observations = arr
        self.mean = arr.mean(axis=0)
        self.mean.setflags(write=False)
        # 1-D neighbour queries run on the sorted sample.
        self.sorted_1d = np.sort(arr[:, 0]) if arr.shape[1] == 1 else None

    @property
    def m(self) -> int:
        return self.observations.shape[0]

    @property
    def dim(self) -> int:
        return self.observations.shape[1]


@dataclass(frozen=True)
class NcmConfig:
    kind: str = "knn"
    k: int = 7
    mu_r: float = 1.0
    sigma2: float = 1.0
    sigma2_r: float = 1.0

    def __post_init__(self):
        if self.kind not in NCM_KINDS:
            raise ConfigError(f"unknown NCM kind {self.kind!r}; choose from {NCM_KINDS}")
        if self.k < 1:
            raise ConfigError("k must be a positive integer")
        if not self.sigma2 > 0:
            raise ConfigError("sigma2 must be positive")
        if not self.sigma2_r >= 0:
            raise ConfigError("sigma2_r must be nonnegative")


def knn_score(train: TrainingSet, z, k: int) -> float:
    """Mean Euclidean distance from ``z`` to its ``k`` nearest training points."""
    z = as_observation(z, train.dim)
    if not 1 <= k <= train.m:
        raise ContractError(f"k={k} must lie in [1, m={train.m}]")
    dist = np.sqrt(np.sum((train.observations - z) ** 2, axis=1))
    if k < train.m:
        dist = np.partition(dist, k - 1)[:k]
    return float(np.mean(dist))


def _log_normal_pdf(z: float, mu: float, var: float) -> float:
    return -0.5 * math.log(2.0 * math.pi * var) - 0.5 * (z - mu) ** 2 / var


def lr_gaussian_score(train: TrainingSet, z, cfg: NcmConfig) -> float:
    """Ratio N(z | mu_r, sigma2 + sigma2_r) / N(z | training mean, sigma2)."""
    z = float(as_observation(z, 1)[0])
    if train.dim != 1:
        raise ContractError("likelihood-ratio NCM is one-dimensional")
    log_num = _log_normal_pdf(z, cfg.mu_r, cfg.sigma2 + cfg.sigma2_r)
    log_den = _log_normal_pdf(z, float(train.mean[0]), cfg.sigma2)
    return math.exp(log_num - log_den)


def mean_distance_score(others: Sequence, z) -> float:
    """Absolute deviation of ``z`` from the mean of ``others`` (1-D)."""
    others = np.asarray(others, dtype=float).ravel()
    if others.size == 0:
        raise ContractError("mean_distance_score needs at least one reference value")
    return abs(float(as_observation(z, 1)[0]) - float(others.mean()))


def make_scorer(cfg: NcmConfig, train: TrainingSet) -> Callable[[np.ndarray], float]:
    """Bind an NCM to a training set, returning ``z -> alpha``."""
    if cfg.kind == "knn":
        if cfg.k > train.m:
            raise ConfigError(f"k={cfg.k} exceeds training size m={train.m}")
        return lambda z: knn_score(train, z, cfg.k)
    if cfg.kind == "lr":
        if train.dim != 1:
            raise ConfigError("likelihood-ratio NCM requires 1-D data")
        return lambda z: lr_gaussian_score(train, z, cfg)
    if train.dim != 1:
        raise ConfigError("mean-distance NCM requires 1-D data")
    return lambda z: mean_distance_score(train.observations[:, 0], z)


def score_stream(cfg: NcmConfig, train: TrainingSet, stream) -> np.ndarray:
    """Vectorised scores of a whole 1-D stream; agrees with :func:`make_scorer`."""
    z = np.asarray(stream, dtype=float).ravel()
    if cfg.kind == "lr":
        var1 = cfg.sigma2 + cfg.sigma2_r
        log_num = -0.5 * np.log(2.0 * np.pi * var1) - 0.5 * (z - cfg.mu_r) ** 2 / var1
        log_den = (
            -0.5 * np.log(2.0 * np.pi * cfg.sigma2)
            - 0.5 * (z - train.mean[0]) ** 2 / cfg.sigma2
        )
        return np.exp(log_num - log_den)
    if cfg.kind == "mean-distance":
        return np.abs(z - train.observations[:, 0].mean())
    from ._kernels import knn_scores_sorted

    return knn_scores_sorted(train.sorted_1d, z, cfg.k)
