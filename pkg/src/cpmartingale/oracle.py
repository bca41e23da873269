"""Bayesian oracle detectors: Gaussian means with a N(0, 1) prior integrated out.

For a segment of length ``l`` with sum ``s1`` and sum of squares ``s2`` the
marginal likelihood under ``z_i ~ N(mu, 1)``, ``mu ~ N(0, 1)`` is

    log L = -(l/2) log(2 pi) - (1/2) log(l + 1) - (1/2) (s2 - s1**2 / (l + 1))

A change at ``theta`` splits the stream into independent prefix and suffix
segments, each with its own draw of the mean.
"""

from __future__ import annotations

import math

import numpy as np

from .core import ConfigError, ContractError, PrefixMoments, logsumexp

ORACLE_KINDS = ("cusum-oracle", "sr-oracle", "pp-oracle")
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def segment_log_marginal(length, s1, s2):
    """Log marginal likelihood from segment length and sums (vectorised)."""
    length = np.asarray(length, dtype=float)
    return -length * _HALF_LOG_2PI - 0.5 * np.log1p(length) - 0.5 * (
        np.asarray(s2) - np.asarray(s1) ** 2 / (length + 1.0)
    )


def log_marginal_nocp(moments: PrefixMoments, start: int, stop: int) -> float:
    length, s1, s2 = moments.segment_sums(start, stop)
    if length == 0:
        return 0.0
    return float(segment_log_marginal(length, s1, s2))


def log_marginal_cp(moments: PrefixMoments, n: int, theta: int) -> float:
    if not 1 <= theta <= n:
        raise ContractError(f"theta={theta} outside [1, {n}]")
    return log_marginal_nocp(moments, 1, theta - 1) + log_marginal_nocp(moments, theta, n)


def log_marginal_cp_all(moments: PrefixMoments, n: int) -> np.ndarray:
    """``log_marginal_cp(moments, n, theta)`` for every theta in 1..n."""
    s1, s2 = moments.s1, moments.s2
    theta = np.arange(1, n + 1)
    pre = segment_log_marginal(theta - 1, s1[theta - 1], s2[theta - 1])
    post = segment_log_marginal(
        n - theta + 1, s1[n] - s1[theta - 1], s2[n] - s2[theta - 1]
    )
    return pre + post


class OracleState:
    """Running oracle statistics over a 1-D stream."""

    def __init__(self, p: float = 0.01):
        if not 0.0 < p < 1.0:
            raise ConfigError("geometric prior parameter must lie in (0, 1)")
        self.p = p
        self.moments = PrefixMoments()
        self.log_nocp = 0.0
        self.log_cp = np.empty(0)

    @property
    def n(self) -> int:
        return self.moments.n

    def update(self, z: float) -> "OracleState":
        self.moments.append(z)
        self.log_nocp = log_marginal_nocp(self.moments, 1, self.n)
        self.log_cp = log_marginal_cp_all(self.moments, self.n)
        return self


def _require(state: OracleState):
    if state.n < 1:
        raise ContractError("oracle statistics need at least one observation")


def oracle_cusum_stat(state: OracleState) -> float:
    _require(state)
    return float(np.max(state.log_cp) - state.log_nocp)


def oracle_sr_stat(state: OracleState) -> float:
    _require(state)
    return float(logsumexp(state.log_cp) - state.log_nocp)


def oracle_pp_stat(state: OracleState) -> float:
    _require(state)
    n, p = state.n, state.p
    log_prior = math.log(p) + np.arange(n) * math.log1p(-p)
    return float(logsumexp(state.log_cp + log_prior) - state.log_nocp - n * math.log1p(-p))


_STATS = {
    "cusum-oracle": oracle_cusum_stat,
    "sr-oracle": oracle_sr_stat,
    "pp-oracle": oracle_pp_stat,
}


class OracleDetector:
    def __init__(self, kind: str, p: float = 0.01):
        if kind not in _STATS:
            raise ConfigError(f"unknown oracle {kind!r}")
        self.kind = kind
        self.state = OracleState(p)

    def update(self, z: float) -> float:
        self.state.update(z)
        return _STATS[self.kind](self.state)
