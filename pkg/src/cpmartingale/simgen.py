"""Synthetic Gaussian mean-shift experiments and false-alarm / delay sweeps."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .betting import BETTING_KINDS, DEFAULT_GRID_SIZE, BettingConfig, PrecomputedDensity, calibrate_precomputed
from .classical import CLASSICAL_KINDS, DEFAULT_GEOM_P, GaussianShiftModel, loglr
from .core import ConfigError, RngHandle
from .martingale import conformal_pvalues
from .ncm import NCM_KINDS, NcmConfig, TrainingSet, score_stream
from .oracle import ORACLE_KINDS

log = logging.getLogger(__name__)

DETECTOR_KINDS = ("icm", "cm") + CLASSICAL_KINDS + ORACLE_KINDS
RESULT_COLUMNS = (
    "detector", "ncm", "betting", "theta", "mu1", "h",
    "fa_prob", "mean_delay", "n_runs", "n_censored", "seed",
)
DEFAULT_EXTRA_HORIZON = 2500
AUTO_GRID_FA = (0.01, 0.5)
AUTO_GRID_SIZE = 60

# Spawn-key roots keep replication and calibration substreams disjoint.
_REP_ROOT = 0
_CALIBRATION_ROOT = 1


class ExtrapolationError(ValueError):
    """Target false-alarm level is not bracketed by the sweep."""


@dataclass(frozen=True)
class DetectorSpec:
    detector: str
    ncm: str = "none"
    betting: str = "none"

    def __post_init__(self):
        if self.detector not in DETECTOR_KINDS:
            raise ConfigError(f"unknown detector {self.detector!r}; choose from {DETECTOR_KINDS}")
        if self.detector == "icm":
            if self.ncm not in NCM_KINDS:
                raise ConfigError(f"ICM needs an NCM from {NCM_KINDS}, got {self.ncm!r}")
            if self.betting not in BETTING_KINDS:
                raise ConfigError(f"ICM needs a betting function from {BETTING_KINDS}, got {self.betting!r}")
        elif self.detector == "cm":
            if self.ncm not in ("mean-distance", "none"):
                raise ConfigError("the transductive CM only supports the mean-distance NCM")
            if self.betting not in BETTING_KINDS or self.betting == "precomputed":
                raise ConfigError("the transductive CM supports constant, mixture or kernel betting")
            object.__setattr__(self, "ncm", "mean-distance")
        elif (self.ncm, self.betting) != ("none", "none"):
            raise ConfigError(f"{self.detector} takes no NCM or betting function")

    @classmethod
    def parse(cls, text: str) -> "DetectorSpec":
        """Parse ``detector[:ncm[:betting]]``, e.g. ``icm:lr:precomputed``."""
        parts = [p.strip() for p in text.strip().split(":")]
        if not parts[0]:
            raise ConfigError("empty detector spec")
        if len(parts) > 3:
            raise ConfigError(f"malformed detector spec {text!r}")
        return cls(*(p or "none" for p in parts))

    @property
    def label(self) -> str:
        if self.detector in ("icm", "cm"):
            return f"{self.detector}:{self.ncm}:{self.betting}"
        return self.detector


@dataclass(frozen=True)
class ExperimentConfig:
    spec: DetectorSpec
    theta: int = 100
    mu1: float = 1.0
    m: int = 200
    extra_horizon: int = DEFAULT_EXTRA_HORIZON
    replications: int = 2000
    h_grid: tuple[float, ...] | None = None
    seed: int = 0
    k: int = 7
    mu_r: float = 1.0
    sigma2: float = 1.0
    sigma2_r: float = 1.0
    window: int = 100
    geom_p: float = DEFAULT_GEOM_P
    grid_size: int = DEFAULT_GRID_SIZE
    calibration_length: int = 1000
    calibration_theta: int = 500
    calibration_mu1: float = 1.0
    calibration_seed: int | None = None
    density: PrecomputedDensity | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.theta < 1:
            raise ConfigError("theta must be a positive integer")
        if self.extra_horizon < 1:
            raise ConfigError("horizon must exceed theta")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.m < 1:
            raise ConfigError("training size m must be at least 1")
        if self.h_grid is not None:
            grid = tuple(float(h) for h in self.h_grid)
            if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
                raise ConfigError("h grid must be nonempty and strictly ascending")
            object.__setattr__(self, "h_grid", grid)
        if self.spec.ncm == "knn" and self.k > self.m:
            raise ConfigError(f"k={self.k} exceeds training size m={self.m}")
        if not 0 < self.geom_p < 1:
            raise ConfigError("geom_p must lie in (0, 1)")
        if not 1 <= self.calibration_theta <= self.calibration_length:
            raise ConfigError("calibration_theta must lie within the calibration stream")
        # Shared-with-NCM parameters are validated there.
        self.ncm_config()

    @property
    def horizon(self) -> int:
        return self.theta + self.extra_horizon

    def ncm_config(self) -> NcmConfig:
        kind = self.spec.ncm if self.spec.ncm != "none" else "knn"
        return NcmConfig(kind, self.k, self.mu_r, self.sigma2, self.sigma2_r)


def generate_realization(cfg: ExperimentConfig, rep: int) -> tuple[np.ndarray, np.ndarray]:
    """Training sample and stream for replication ``rep``.

    Training and ``z_1..z_{theta-1}`` are N(0, 1); ``z_theta`` onwards are
    N(mu1, 1).
    """
    rng = RngHandle(cfg.seed, (_REP_ROOT, rep))
    training = rng.standard_normal(cfg.m)
    stream = rng.standard_normal(cfg.horizon)
    stream[cfg.theta - 1:] += cfg.mu1
    return training, stream


def replication_uniforms(cfg: ExperimentConfig, rep: int) -> np.ndarray:
    """Tie-breaking draws for the conformal p-values of replication ``rep``."""
    return RngHandle(cfg.seed, (_REP_ROOT, rep, 1)).random(cfg.horizon)


def replication_training(cfg: ExperimentConfig, rep: int, training: np.ndarray) -> TrainingSet:
    return TrainingSet(training, rng=RngHandle(cfg.seed, (_REP_ROOT, rep, 2)))


def calibration_density(cfg: ExperimentConfig) -> PrecomputedDensity:
    """Precomputed betting density from one dedicated calibration realization."""
    if cfg.density is not None:
        return cfg.density
    seed = cfg.seed if cfg.calibration_seed is None else cfg.calibration_seed
    rng = RngHandle(seed, (_CALIBRATION_ROOT,))
    training = rng.standard_normal(cfg.m)
    stream = rng.standard_normal(cfg.calibration_length)
    stream[cfg.calibration_theta - 1:] += cfg.calibration_mu1
    train = TrainingSet(training, rng=rng.substream(2))
    pvalues = conformal_pvalues(train, stream, cfg.ncm_config(), rng.substream(1))
    return calibrate_precomputed(pvalues, cfg.grid_size)


def statistic_trajectory(
    cfg: ExperimentConfig,
    rep: int,
    length: int | None = None,
    stop: float = math.inf,
    density: PrecomputedDensity | None = None,
) -> np.ndarray:
    """Detector statistic at steps 1.. of replication ``rep``.

    Computation ends at ``length`` steps or as soon as the statistic reaches
    ``stop``, whichever comes first.
    """
    length = cfg.horizon if length is None else min(length, cfg.horizon)
    training, stream = generate_realization(cfg, rep)
    stream = stream[:length]
    spec = cfg.spec
    if spec.detector in CLASSICAL_KINDS:
        ells = loglr(GaussianShiftModel(0.0, cfg.mu1, 1.0), stream)
        code = CLASSICAL_KINDS.index(spec.detector)
        return _kernels.classical_trajectory(ells, code, cfg.geom_p, stop)
    if spec.detector in ORACLE_KINDS:
        code = ORACLE_KINDS.index(spec.detector)
        return _kernels.oracle_trajectory(stream, code, cfg.geom_p, stop)

    u = replication_uniforms(cfg, rep)[:length]
    bet = _kernels.BET_CODES[spec.betting]
    grid = np.ones(2)
    if spec.betting == "precomputed":
        grid = (density or calibration_density(cfg)).values
    if spec.detector == "cm":
        return _kernels.full_cm_trajectory(stream, u, bet, cfg.window, grid, stop)[0]
    train = replication_training(cfg, rep, training)
    scores = score_stream(cfg.ncm_config(), train, stream)
    uniq, ranks = np.unique(scores, return_inverse=True)
    return _kernels.icm_trajectory(ranks.astype(np.int64), uniq.size, u, bet, cfg.window, grid, stop)[0]


def first_passage(trajectory: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """1-based first step with statistic >= h for each h; 0 marks no crossing."""
    runmax = np.maximum.accumulate(trajectory)
    idx = np.searchsorted(runmax, thresholds, side="left")
    return np.where(idx < runmax.size, idx + 1, 0)


@dataclass
class SweepResult:
    spec: DetectorSpec
    theta: int
    mu1: float
    seed: int
    thresholds: np.ndarray
    fa_prob: np.ndarray
    mean_delay: np.ndarray
    delay_se: np.ndarray
    n_runs: int
    n_censored: np.ndarray
    taus: np.ndarray | None = field(default=None, repr=False)

    def rows(self) -> list[dict]:
        return [
            {
                "detector": self.spec.detector,
                "ncm": self.spec.ncm,
                "betting": self.spec.betting,
                "theta": self.theta,
                "mu1": _fmt(self.mu1),
                "h": _fmt(h),
                "fa_prob": _fmt(fa),
                "mean_delay": _fmt(d),
                "n_runs": self.n_runs,
                "n_censored": int(c),
                "seed": self.seed,
            }
            for h, fa, d, c in zip(self.thresholds, self.fa_prob, self.mean_delay, self.n_censored)
        ]


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def aggregate(taus: np.ndarray, theta: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """False-alarm probability, mean delay, its standard error and censoring per threshold.

    ``taus`` has shape (runs, thresholds) with 0 marking runs that never alarmed.
    """
    taus = np.atleast_2d(taus)
    eff = np.where(taus == 0, np.iinfo(np.int64).max, taus)
    if np.any(np.diff(eff, axis=1) < 0):
        raise AssertionError("stopping time decreased as the threshold increased")
    n_runs = taus.shape[0]
    false_alarm = (taus > 0) & (taus <= theta)
    detected = taus > theta
    fa = false_alarm.mean(axis=0)
    count = detected.sum(axis=0)
    delay_sum = np.where(detected, taus - theta, 0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, delay_sum / np.maximum(count, 1), np.nan)
        sq = np.where(detected, (taus - theta - mean) ** 2, 0.0).sum(axis=0)
        se = np.where(count > 1, np.sqrt(sq / np.maximum(count - 1, 1) / np.maximum(count, 1)), np.nan)
    censored = (taus == 0).sum(axis=0)
    if np.any(np.diff(fa) > 0):
        raise AssertionError("false-alarm probability increased with the threshold")
    return fa, mean, se, censored


def auto_grid(pre_change_max: np.ndarray, size: int = AUTO_GRID_SIZE, fa_range=AUTO_GRID_FA) -> np.ndarray:
    """Thresholds at empirical quantiles of the pre-change maximum.

    ``P(max_{n<=theta} stat >= h)`` is the false-alarm probability, so the
    ``1 - fa`` quantiles give thresholds whose false-alarm rates are spread
    log-uniformly over ``fa_range``.
    """
    fas = np.geomspace(fa_range[0], fa_range[1], size)
    finite = pre_change_max[np.isfinite(pre_change_max)]
    h = np.quantile(finite, 1.0 - fas, method="inverted_cdf")
    return np.unique(h)


def _pre_change_max(cfg, density, reps):
    return np.array([np.max(statistic_trajectory(cfg, r, cfg.theta, density=density)) for r in reps])


def _passages(cfg, density, reps, grid):
    stop = float(grid[-1])
    return np.array([first_passage(statistic_trajectory(cfg, r, stop=stop, density=density), grid) for r in reps])


def _chunks(items: Sequence[int], jobs: int) -> list[list[int]]:
    size = max(1, math.ceil(len(items) / (jobs * 4)))
    return [list(items[i:i + size]) for i in range(0, len(items), size)]


def _map(fn, cfg, density, reps, extra, jobs):
    if jobs <= 1 or len(reps) < 2:
        return fn(cfg, density, reps, *extra)
    with ProcessPoolExecutor(jobs) as pool:
        parts = list(pool.map(fn, *zip(*[(cfg, density, c, *extra) for c in _chunks(reps, jobs)])))
    return np.concatenate(parts)


def run_sweep(cfg: ExperimentConfig, jobs: int = 1, keep_taus: bool = False) -> SweepResult:
    """Monte Carlo estimate of the (false alarm, mean delay) curve.

    Each replication's statistic is computed once up to the largest grid
    threshold; ``tau(h)`` for every ``h`` is read off its running maximum.
    Without an explicit grid, a first pass over steps ``1..theta`` places the
    thresholds at quantiles of the pre-change maximum.
    """
    density = calibration_density(cfg) if cfg.spec.betting == "precomputed" else None
    reps = list(range(cfg.replications))
    if cfg.h_grid is None:
        pre = _map(_pre_change_max, cfg, density, reps, (), jobs)
        grid = auto_grid(pre)
    else:
        grid = np.asarray(cfg.h_grid, dtype=float)
    taus = _map(_passages, cfg, density, reps, (grid,), jobs).reshape(len(reps), grid.size)
    fa, mean, se, censored = aggregate(taus, cfg.theta)
    if np.any(censored):
        log.warning("%s theta=%s mu1=%s: %d censored runs excluded from delay means",
                    cfg.spec.label, cfg.theta, cfg.mu1, int(censored.max()))
    return SweepResult(cfg.spec, cfg.theta, cfg.mu1, cfg.seed, grid, fa, mean, se,
                       len(reps), censored, taus if keep_taus else None)


def _curve_points(sweep: SweepResult, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    fa = np.asarray(sweep.fa_prob, dtype=float)
    delay = np.asarray(sweep.mean_delay, dtype=float)
    ok = np.isfinite(delay) & np.isfinite(values)
    fa, delay, values = fa[ok], delay[ok], values[ok]
    # Several thresholds can share one FA level; keep the one with the smallest delay.
    order = np.lexsort((delay, fa))
    fa, values = fa[order], values[order]
    first = np.concatenate([[True], np.diff(fa) > 0])
    return fa[first], values[first]


def interpolate_at_fa(sweep: SweepResult, target_fa: float, field: str = "mean_delay") -> float:
    """Linear interpolation of ``field`` at ``target_fa`` between bracketing thresholds."""
    fa, vals = _curve_points(sweep, np.asarray(getattr(sweep, field), dtype=float))
    hit = np.flatnonzero(fa == target_fa)
    if hit.size:
        return float(vals[hit[0]])
    if fa.size < 2 or not fa[0] < target_fa < fa[-1]:
        lo = f"{fa[0]:.4g}" if fa.size else "n/a"
        hi = f"{fa[-1]:.4g}" if fa.size else "n/a"
        raise ExtrapolationError(f"FA={target_fa} not bracketed by sweep range [{lo}, {hi}]")
    i = int(np.searchsorted(fa, target_fa)) - 1
    w = (target_fa - fa[i]) / (fa[i + 1] - fa[i])
    return float(vals[i] + w * (vals[i + 1] - vals[i]))


GRID_THETAS = (100, 200)
GRID_MU1 = (1.0, 1.5, 2.0)
_ORACLES = ("cusum-oracle", "sr-oracle", "pp-oracle")


def _icm_pair(betting: str) -> list[str]:
    return [f"icm:lr:{betting}", f"icm:knn:{betting}"]


PRESETS: dict[str, list[str]] = {
    "table1": _icm_pair("constant") + list(_ORACLES),
    "table2": _icm_pair("mixture") + list(_ORACLES),
    "table3": _icm_pair("kernel") + list(_ORACLES),
    "table4": _icm_pair("precomputed") + list(_ORACLES),
    "table5": _icm_pair("precomputed") + ["cusum", "sr", "pp"],
    "fig3": ["icm:mean-distance:constant", "cm:mean-distance:constant"] + list(_ORACLES),
}


def preset_specs(name: str) -> list[DetectorSpec]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return [DetectorSpec.parse(s) for s in PRESETS[name]]


def run_grid(
    base: ExperimentConfig,
    specs: Iterable[DetectorSpec],
    thetas: Iterable[int],
    mu1s: Iterable[float],
    jobs: int = 1,
    progress=None,
) -> list[SweepResult]:
    results = []
    combos = [(s, t, mu) for s in specs for t in thetas for mu in mu1s]
    for i, (spec, theta, mu1) in enumerate(combos, 1):
        cfg = replace(base, spec=spec, theta=theta, mu1=mu1)
        if progress:
            progress(f"[{i}/{len(combos)}] {spec.label} theta={theta} mu1={mu1}")
        results.append(run_sweep(cfg, jobs))
    return results


def write_results_csv(path, sweeps: Iterable[SweepResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for sweep in sweeps:
            writer.writerows(sweep.rows())


def read_results_csv(path) -> list[SweepResult]:
    """Rebuild sweeps (one per detector/theta/mu1 group) from a results CSV."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in RESULT_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ConfigError(f"{path}: missing column(s) {', '.join(missing)}")
        groups: dict[tuple, list[dict]] = {}
        for row in reader:
            key = (row["detector"], row["ncm"], row["betting"], int(row["theta"]), float(row["mu1"]), int(row["seed"]))
            groups.setdefault(key, []).append(row)
    sweeps = []
    for (det, ncm, bet, theta, mu1, seed), rows in groups.items():
        col = lambda name, cast=float: np.array([cast(r[name]) for r in rows])  # noqa: E731
        sweeps.append(SweepResult(
            DetectorSpec(det, ncm, bet), theta, mu1, seed,
            col("h"), col("fa_prob"), col("mean_delay"), np.full(len(rows), np.nan),
            int(rows[0]["n_runs"]), col("n_censored", int),
        ))
    return sweeps
