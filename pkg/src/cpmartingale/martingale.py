"""Conformal p-values, the inductive conformal martingale and its cut-log statistic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .betting import BettingConfig
from .core import ContractError, RngHandle, ScoreBuffer, as_observation
from .ncm import NcmConfig, TrainingSet, make_scorer

TRACE_COLUMNS = ("n", "z", "alpha", "p", "log_S", "C")


def conformal_pvalue(buffer: ScoreBuffer, alpha_n: float, u: float) -> float:
    """Smoothed conformal p-value of ``alpha_n`` among the buffered scores.

    The buffer must already hold ``alpha_n``.
    """
    if buffer.n == 0:
        raise ContractError("p-value of an empty score buffer")
    if not 0.0 <= u <= 1.0:
        raise ContractError(f"tie-breaking draw {u!r} outside [0, 1]")
    greater, equal = buffer.rank_counts(alpha_n)
    if equal == 0:
        raise ContractError("alpha_n is not in the buffer")
    return (greater + u * equal) / buffer.n


@dataclass
class IcmState:
    log_S: float = 0.0
    C: float = 0.0
    n: int = 0
    min_log_S: float = 0.0
    buffer: ScoreBuffer = field(default_factory=ScoreBuffer)


def icm_step(state: IcmState, g_value: float, check: bool = False) -> IcmState:
    """Multiply the martingale by ``g_value`` and update the cut statistic."""
    if not g_value > 0:
        raise ContractError(f"betting value must be positive, got {g_value!r}")
    log_g = math.log(g_value)
    state.log_S += log_g
    state.C = max(0.0, state.C + log_g)
    state.n += 1
    # min over S_0 = 1 and S_1..S_n; C_n is the log-martingale above that floor.
    state.min_log_S = min(state.min_log_S, state.log_S)
    if check and abs(state.C - (state.log_S - state.min_log_S)) > 1e-9:
        raise AssertionError(
            f"cut statistic drifted at n={state.n}: "
            f"{state.C} vs {state.log_S - state.min_log_S}"
        )
    return state


@dataclass
class AlarmResult:
    tau: int | None
    trace: list[tuple] | None = None

    @property
    def alarmed(self) -> bool:
        return self.tau is not None


class IcmDetector:
    """Online inductive conformal martingale detector.

    >>> det = IcmDetector(TrainingSet([0.0, 1.0]), NcmConfig("knn", k=1),
    ...                   BettingConfig("constant"), RngHandle(0))
    >>> det.update(0.5).C >= 0
    True
    """

    def __init__(
        self,
        train: TrainingSet,
        ncm: NcmConfig,
        betting: BettingConfig,
        rng: RngHandle,
        check: bool = False,
    ):
        self.train = train
        self.score = make_scorer(ncm, train)
        self.bet = betting.build()
        self.rng = rng
        self.state = IcmState()
        self.check = check
        self.last: tuple | None = None

    def update(self, z) -> IcmState:
        z = as_observation(z, self.train.dim)
        alpha = self.score(z)
        self.state.buffer.insert(alpha)
        p = conformal_pvalue(self.state.buffer, alpha, self.rng.uniform())
        g = self.bet(p)
        self.bet.update(p)
        icm_step(self.state, g, self.check)
        self.last = (self.state.n, z, alpha, p, self.state.log_S, self.state.C)
        return self.state


def conformal_pvalues(train: TrainingSet, stream: Iterable, ncm: NcmConfig, rng: RngHandle) -> np.ndarray:
    """Inductive conformal p-values of a whole stream (no betting involved)."""
    score = make_scorer(ncm, train)
    buffer = ScoreBuffer()
    out = []
    for z in stream:
        alpha = score(as_observation(z, train.dim))
        buffer.insert(alpha)
        out.append(conformal_pvalue(buffer, alpha, rng.uniform()))
    return np.asarray(out)


def _trace_row(row: tuple) -> tuple:
    n, z, alpha, p, log_s, c = row
    zval = float(z[0]) if np.size(z) == 1 else " ".join(f"{v:g}" for v in np.ravel(z))
    return (n, zval, alpha, p, log_s, c)


def _run(step, stream: Iterable, h: float, trace: bool, full: bool) -> AlarmResult:
    rows = [] if trace else None
    for z in stream:
        state, row = step(z)
        if rows is not None:
            rows.append(_trace_row(row))
        if state.C >= h and not full:
            return AlarmResult(state.n, rows)
    if full and rows is not None:
        hit = next((r[0] for r in rows if r[5] >= h), None)
        return AlarmResult(hit, rows)
    return AlarmResult(None, rows)


def run_icm(
    train: TrainingSet,
    stream: Iterable,
    ncm: NcmConfig,
    betting: BettingConfig,
    h: float,
    rng: RngHandle,
    trace: bool = False,
    full_trace: bool = False,
    check: bool = False,
) -> AlarmResult:
    """Run the inductive detector until the cut statistic reaches ``h``.

    ``full_trace`` keeps processing after the alarm so the whole trajectory
    is recorded; ``tau`` is still the first crossing.
    """
    if h < 0:
        raise ContractError("threshold h must be nonnegative")
    det = IcmDetector(train, ncm, betting, rng, check=check)

    def step(z):
        state = det.update(z)
        return state, det.last

    return _run(step, stream, h, trace or full_trace, full_trace)


class FullCmDetector:
    """Transductive conformal martingale with the mean-distance NCM.

    Every step rescores all observations against the leave-one-out mean of
    the rest, using the running total.
    """

    def __init__(self, betting: BettingConfig, rng: RngHandle):
        self.bet = betting.build()
        self.rng = rng
        self.values: list[float] = []
        self.total = 0.0
        self.state = IcmState()
        self.last: tuple | None = None

    def update(self, z) -> IcmState:
        z = float(as_observation(z, 1)[0])
        self.values.append(z)
        self.total += z
        n = len(self.values)
        if n == 1:
            scores = np.zeros(1)
        else:
            vals = np.asarray(self.values)
            scores = np.abs(vals - (self.total - vals) / (n - 1))
        alpha = scores[-1]
        greater = int(np.count_nonzero(scores > alpha))
        equal = int(np.count_nonzero(scores == alpha))
        p = (greater + self.rng.uniform() * equal) / n
        g = self.bet(p)
        self.bet.update(p)
        icm_step(self.state, g)
        self.last = (n, np.array([z]), float(alpha), p, self.state.log_S, self.state.C)
        return self.state


def run_full_cm(
    stream: Sequence,
    betting: BettingConfig,
    h: float,
    rng: RngHandle,
    trace: bool = False,
    full_trace: bool = False,
) -> AlarmResult:
    if h < 0:
        raise ContractError("threshold h must be nonnegative")
    det = FullCmDetector(betting, rng)

    def step(z):
        state = det.update(z)
        return state, det.last

    return _run(step, stream, h, trace or full_trace, full_trace)
