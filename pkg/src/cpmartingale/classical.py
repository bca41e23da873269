"""CUSUM, Shiryaev-Roberts and posterior-probability statistics for a known Gaussian shift.

All three are kept in log domain. The recursions are O(1) per observation:

* CUSUM       ``W_n = ell_n + max(W_{n-1}, 0)``
* S-R         ``R_n = (R_{n-1} + 1) * exp(ell_n)``
* posterior   ``rho_n = exp(ell_n) * (rho_{n-1} + p) / (1 - p)``

where ``ell_n`` is the log likelihood ratio of observation ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, log_add

CLASSICAL_KINDS = ("cusum", "sr", "pp")
DEFAULT_GEOM_P = 0.01


@dataclass(frozen=True)
class GaussianShiftModel:
    mu0: float = 0.0
    mu1: float = 1.0
    sigma2: float = 1.0

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ConfigError("sigma2 must be positive")


def loglr(model: GaussianShiftModel, z):
    """log f1(z)/f0(z); works elementwise on arrays."""
    d = model.mu1 - model.mu0
    return (d * np.asarray(z, dtype=float) - 0.5 * (model.mu1**2 - model.mu0**2)) / model.sigma2


@dataclass
class ClassicalState:
    kind: str
    p: float = DEFAULT_GEOM_P
    W: float = -math.inf
    log_R: float = -math.inf
    log_rho: float = -math.inf
    n: int = 0

    def __post_init__(self):
        if self.kind not in CLASSICAL_KINDS:
            raise ConfigError(f"unknown classical detector {self.kind!r}")
        if not 0.0 < self.p < 1.0:
            raise ConfigError("geometric prior parameter must lie in (0, 1)")

    @property
    def statistic(self) -> float:
        if self.kind == "cusum":
            return self.W
        if self.kind == "sr":
            return self.log_R
        return self.log_rho


def cusum_step(state: ClassicalState, ell: float) -> ClassicalState:
    state.W = ell + max(state.W, 0.0) if state.n else ell
    state.n += 1
    return state


def sr_step(state: ClassicalState, ell: float) -> ClassicalState:
    state.log_R = log_add(state.log_R, 0.0) + ell
    state.n += 1
    return state


def pp_step(state: ClassicalState, ell: float) -> ClassicalState:
    p = state.p
    state.log_rho = ell + log_add(state.log_rho, math.log(p)) - math.log1p(-p)
    state.n += 1
    return state


_STEPS = {"cusum": cusum_step, "sr": sr_step, "pp": pp_step}


class ClassicalDetector:
    """Online optimal detector for a fully specified Gaussian mean shift."""

    def __init__(self, kind: str, model: GaussianShiftModel, p: float = DEFAULT_GEOM_P):
        self.model = model
        self.state = ClassicalState(kind, p)
        self._step = _STEPS[kind]

    def update(self, z: float) -> float:
        self._step(self.state, float(loglr(self.model, z)))
        return self.state.statistic


def classical_trajectory(kind: str, ells, p: float = DEFAULT_GEOM_P) -> np.ndarray:
    """Statistic after each of the log-likelihood ratios ``ells``."""
    state = ClassicalState(kind, p)
    step = _STEPS[kind]
    out = np.empty(len(ells))
    for i, ell in enumerate(ells):
        step(state, float(ell))
        out[i] = state.statistic
    return out
