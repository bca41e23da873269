"""Betting functions: densities on [0, 1] that turn p-values into martingale factors."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from .core import CalibrationError, ConfigError, ContractError

BETTING_KINDS = ("constant", "mixture", "kernel", "precomputed")

MIXTURE_P_MIN = 1e-12
DENSITY_FLOOR = 1e-6
BANDWIDTH_FLOOR = 0.05
DEFAULT_GRID_SIZE = 1001
FILE_MAGIC = "cpmartingale-betting-density v1"


def _check_p(p: float) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"p-value {p!r} outside [0, 1]")
    return p


def constant_bet(p: float) -> float:
    return 1.5 if _check_p(p) < 0.5 else 0.5


def mixture_bet(p: float) -> float:
    """Closed form of the power-mixture betting function.

    Near p = 1 the closed form cancels catastrophically, so a Taylor series
    in ``log p`` is used there.
    """
    p = _check_p(p)
    if p == 0.0:
        # Only an exact zero (U rounding to 0) is clamped; any clamp above the
        # smallest double would drop tail mass of order 1/|log p_min|.
        p = MIXTURE_P_MIN
    a = math.log(p)
    if abs(a) < 1e-3:
        return 0.5 - a / 6.0 + a * a / 24.0 - a**3 / 120.0
    return 1.0 / a + (1.0 - p) / (p * a * a)


def silverman_bandwidth(sample) -> float:
    x = np.asarray(sample, dtype=float)
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    if x.size == 0:
        return BANDWIDTH_FLOOR
    return max(BANDWIDTH_FLOOR, 1.06 * sd * x.size ** (-0.2))


def _reflected_centres(sample: np.ndarray) -> np.ndarray:
    return np.concatenate([-sample, sample, 2.0 - sample])


def reflected_kde(sample, points, bandwidth: float | None = None) -> np.ndarray:
    """Gaussian KDE of ``sample`` with mirror images about 0 and 1.

    Returned values are not yet normalised over [0, 1]; the tripled sample
    is divided by ``len(sample)`` so the total mass on [0, 1] is close to one.
    """
    sample = np.asarray(sample, dtype=float).ravel()
    h = silverman_bandwidth(sample) if bandwidth is None else float(bandwidth)
    centres = _reflected_centres(sample)
    u = (np.asarray(points, dtype=float)[..., None] - centres) / h
    return np.exp(-0.5 * u * u).sum(axis=-1) / (sample.size * h * math.sqrt(2 * math.pi))


def reflected_kde_mass(sample, bandwidth: float) -> float:
    """Exact mass of :func:`reflected_kde` on [0, 1]."""
    sample = np.asarray(sample, dtype=float).ravel()
    centres = _reflected_centres(sample)
    s = bandwidth * math.sqrt(2.0)
    return float(np.sum(0.5 * (erf((1.0 - centres) / s) - erf(-centres / s)))) / sample.size


class ConstantBetting:
    kind = "constant"

    def __call__(self, p: float) -> float:
        return constant_bet(p)

    def update(self, p: float) -> None:
        pass


class MixtureBetting:
    kind = "mixture"

    def __call__(self, p: float) -> float:
        return mixture_bet(p)

    def update(self, p: float) -> None:
        pass


class KdeWindowBetting:
    """Plug-in betting density from the last ``window`` p-values.

    The reflected estimate is normalised analytically and blended with the
    uniform density at weight ``DENSITY_FLOOR`` so every value is strictly
    positive while the integral stays exactly one.
    """

    kind = "kernel"

    def __init__(self, window: int = 100):
        if window < 1:
            raise ConfigError("kernel betting window must be positive")
        self.window = int(window)
        self.history: deque[float] = deque(maxlen=self.window)

    def density(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if not self.history:
            return np.ones_like(pts)
        sample = np.fromiter(self.history, dtype=float)
        h = silverman_bandwidth(sample)
        f = reflected_kde(sample, pts, h) / reflected_kde_mass(sample, h)
        return (1.0 - DENSITY_FLOOR) * f + DENSITY_FLOOR

    def __call__(self, p: float) -> float:
        return float(self.density(_check_p(p)))

    def update(self, p: float) -> None:
        self.history.append(_check_p(p))


def kde_window_bet(history, p: float) -> float:
    """Evaluate the windowed KDE betting function for a given history."""
    bet = KdeWindowBetting(max(len(history), 1))
    for q in history:
        bet.update(q)
    return bet(p)


@dataclass
class PrecomputedDensity:
    """Piecewise-linear density on a uniform grid over [0, 1]."""

    values: np.ndarray
    grid: np.ndarray = field(init=False)
    kind = "precomputed"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size < 2:
            raise CalibrationError("density grid needs at least two nodes")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise CalibrationError("density values must be finite and nonnegative")
        self.grid = np.linspace(0.0, 1.0, self.values.size)

    @property
    def grid_size(self) -> int:
        return self.values.size

    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.grid))

    def __call__(self, p: float) -> float:
        return float(np.interp(_check_p(p), self.grid, self.values))

    def update(self, p: float) -> None:
        pass

    def write(self, path) -> None:
        lines = [FILE_MAGIC, f"grid_size={self.grid_size}"]
        lines += [f"{x:.6f} {v:.17g}" for x, v in zip(self.grid, self.values)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path) -> "PrecomputedDensity":
        lines = Path(path).read_text().splitlines()
        if len(lines) < 2 or lines[0].strip() != FILE_MAGIC:
            raise CalibrationError(f"{path}: not a betting density file")
        key, _, size = lines[1].partition("=")
        if key.strip() != "grid_size" or not size.strip().isdigit():
            raise CalibrationError(f"{path}: malformed grid_size line")
        size = int(size)
        rows = [ln.split() for ln in lines[2:] if ln.strip()]
        if len(rows) != size:
            raise CalibrationError(f"{path}: expected {size} grid lines, found {len(rows)}")
        try:
            pts = np.array([float(r[0]) for r in rows])
            vals = np.array([float(r[1]) for r in rows])
        except (ValueError, IndexError) as exc:
            raise CalibrationError(f"{path}: malformed grid line") from exc
        if not np.allclose(pts, np.linspace(0.0, 1.0, size), atol=1e-6):
            raise CalibrationError(f"{path}: grid is not uniform on [0, 1]")
        density = cls(vals)
        total = density.integral()
        if abs(total - 1.0) > 1e-6:
            raise CalibrationError(f"{path}: density integrates to {total!r}, not 1")
        return density


def calibrate_precomputed(calibration_pvalues, grid_size: int = DEFAULT_GRID_SIZE) -> PrecomputedDensity:
    """Fit the reflected KDE to calibration p-values and tabulate it on a grid."""
    p = np.asarray(calibration_pvalues, dtype=float).ravel()
    if p.size == 0:
        raise CalibrationError("no calibration p-values")
    if np.any((p < 0) | (p > 1)):
        raise CalibrationError("calibration p-values must lie in [0, 1]")
    if grid_size < 2:
        raise CalibrationError("grid_size must be at least 2")
    grid = np.linspace(0.0, 1.0, grid_size)
    dens = np.maximum(reflected_kde(p, grid), DENSITY_FLOOR)
    dens /= np.trapezoid(dens, grid)
    return PrecomputedDensity(dens)


def precomputed_bet(density: PrecomputedDensity, p: float) -> float:
    if not isinstance(density, PrecomputedDensity):
        raise ContractError("precomputed_bet needs a calibrated PrecomputedDensity")
    return density(p)


@dataclass(frozen=True)
class BettingConfig:
    """Which betting function a detector uses; builds a fresh instance per stream."""

    kind: str = "constant"
    window: int = 100
    density: PrecomputedDensity | None = None

    def __post_init__(self):
        if self.kind not in BETTING_KINDS:
            raise ConfigError(f"unknown betting kind {self.kind!r}; choose from {BETTING_KINDS}")
        if self.kind == "precomputed" and self.density is None:
            raise ConfigError("precomputed betting needs a calibrated density")
        if self.window < 1:
            raise ConfigError("window must be positive")

    def build(self):
        if self.kind == "constant":
            return ConstantBetting()
        if self.kind == "mixture":
            return MixtureBetting()
        if self.kind == "kernel":
            return KdeWindowBetting(self.window)
        return self.density
