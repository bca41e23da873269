import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from cpmartingale.betting import (
    BettingConfig,
    KdeWindowBetting,
    PrecomputedDensity,
    calibrate_precomputed,
    constant_bet,
    kde_window_bet,
    mixture_bet,
    precomputed_bet,
)
from cpmartingale.core import CalibrationError, ConfigError, ContractError
from oracles import mixture_quad


def _integral(fn, kinks=None):
    val, _ = integrate.quad(fn, 0.0, 1.0, points=kinks, epsabs=1e-10, epsrel=1e-10, limit=2000)
    return val


def test_constant_examples():
    assert constant_bet(0.3) == 1.5
    assert constant_bet(0.5) == 0.5
    assert constant_bet(0.0) == 1.5
    assert constant_bet(1.0) == 0.5
    assert _integral(constant_bet) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ContractError):
        constant_bet(1.2)


def test_mixture_examples():
    assert mixture_bet(1.0) == 0.5
    assert mixture_bet(math.exp(-1)) == pytest.approx(math.e - 2, abs=1e-8)
    assert mixture_bet(0.01) == pytest.approx(4.451, abs=1e-3)
    assert math.isfinite(mixture_bet(0.0))


def test_mixture_closed_form_matches_quadrature():
    for p in np.linspace(0.001, 1.0, 1000):
        assert mixture_bet(p) == pytest.approx(mixture_quad(p), abs=1e-8)


def test_mixture_integrates_to_one():
    # Substituting p = exp(-t) tames the 1/(p log^2 p) spike; the mass below
    # delta is (1 - delta)/|log delta| exactly.
    delta = 1e-300
    body, _ = integrate.quad(
        lambda t: mixture_bet(math.exp(-t)) * math.exp(-t),
        0.0, -math.log(delta), limit=500, epsabs=1e-12, epsrel=1e-12,
    )
    assert body + (delta - 1.0) / math.log(delta) == pytest.approx(1.0, abs=1e-6)


def test_mixture_only_clamps_exact_zero():
    assert mixture_bet(1e-20) > mixture_bet(1e-12)
    assert mixture_bet(0.0) == mixture_bet(1e-12)


def test_kde_uniform_history_is_flat():
    # A single 5000-point history has sd ~0.03 at each point, so average a few.
    points = (0.1, 0.5, 0.9)
    vals = np.array([
        [kde_window_bet(np.random.default_rng(s).random(5000), p) for p in points]
        for s in range(20)
    ])
    assert np.all(np.abs(vals.mean(axis=0) - 1.0) < 0.02)
    single = vals[0]
    assert np.all(np.abs(single - 1.0) < 0.05)


def test_kde_empty_history_is_uniform():
    assert KdeWindowBetting(10)(0.3) == 1.0


def test_kde_concentrated_history_bets_low():
    hist = np.full(100, 0.02)
    assert kde_window_bet(hist, 0.05) > kde_window_bet(hist, 0.95)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=0, max_size=40))
def test_kde_integrates_to_one(history):
    bet = KdeWindowBetting(40)
    for p in history:
        bet.update(p)
    assert _integral(bet) == pytest.approx(1.0, abs=1e-6)
    assert bet(0.0) > 0 and bet(1.0) > 0


def test_kde_window_keeps_last_values():
    bet = KdeWindowBetting(3)
    for p in (0.9, 0.9, 0.1, 0.1, 0.1):
        bet.update(p)
    assert list(bet.history) == [0.1, 0.1, 0.1]


def test_kde_permutation_invariant(rng):
    hist = rng.random(50)
    a = kde_window_bet(hist, 0.37)
    b = kde_window_bet(hist[::-1].copy(), 0.37)
    assert a == pytest.approx(b, rel=1e-12)


def test_extreme_history_still_integrates():
    # Bandwidth floor and reflection leave almost no mass near 1; the uniform blend keeps it positive.
    bet = KdeWindowBetting(100)
    for _ in range(100):
        bet.update(0.0)
    assert bet(1.0) >= 1e-6
    assert _integral(bet) == pytest.approx(1.0, abs=1e-6)


def test_calibrate_uniform_is_flat():
    p = (np.arange(20000) + 0.5) / 20000
    dens = calibrate_precomputed(p)
    assert np.all(np.abs(dens.values - 1.0) < 0.05)
    rng = np.random.default_rng(11)
    dens = calibrate_precomputed(rng.random(20000))
    assert np.all(np.abs(dens.values[100:-100] - 1.0) < 0.05)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60), st.integers(2, 300))
def test_calibrated_trapezoid_integral(pvals, size):
    dens = calibrate_precomputed(pvals, size)
    assert dens.integral() == pytest.approx(1.0, abs=1e-9)
    assert np.all(dens.values > 0)
    # Linear interpolation has a kink at every interior node.
    assert _integral(dens, np.linspace(0.0, 1.0, size)[1:-1]) == pytest.approx(1.0, abs=1e-6)


def test_calibrate_rejects_bad_input():
    with pytest.raises(CalibrationError):
        calibrate_precomputed([])
    with pytest.raises(CalibrationError):
        calibrate_precomputed([0.5, 1.5])


def test_precomputed_interpolation():
    flat = PrecomputedDensity(np.ones(11))
    assert precomputed_bet(flat, 0.123) == 1.0
    vals = np.zeros(1001)
    vals[0] = 2.0
    ramp = PrecomputedDensity(vals)
    assert precomputed_bet(ramp, 0.0) == 2.0
    assert precomputed_bet(ramp, 0.0005) == pytest.approx(1.0)
    assert precomputed_bet(ramp, 0.001) == 0.0
    with pytest.raises(ContractError):
        precomputed_bet(None, 0.5)


def test_density_file_roundtrip(tmp_path):
    dens = calibrate_precomputed(np.random.default_rng(1).beta(0.5, 1.0, 500), 101)
    path = tmp_path / "d.txt"
    dens.write(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "cpmartingale-betting-density v1"
    assert lines[1] == "grid_size=101"
    assert len(lines) == 103
    back = PrecomputedDensity.read(path)
    np.testing.assert_allclose(back.values, dens.values, rtol=1e-15)


def test_density_file_reader_checks_integral(tmp_path):
    path = tmp_path / "bad.txt"
    rows = "\n".join(f"{x:.6f} 2.0" for x in np.linspace(0, 1, 5))
    path.write_text(f"cpmartingale-betting-density v1\ngrid_size=5\n{rows}\n")
    with pytest.raises(CalibrationError, match="integrates"):
        PrecomputedDensity.read(path)
    path.write_text("something else\n")
    with pytest.raises(CalibrationError):
        PrecomputedDensity.read(path)


def test_betting_config():
    with pytest.raises(ConfigError):
        BettingConfig("precomputed")
    with pytest.raises(ConfigError):
        BettingConfig("martingale")
    assert BettingConfig("kernel", window=5).build().window == 5


def test_constant_bet_has_unit_mean_on_uniform():
    u = np.random.default_rng(99).random(100_000)
    g = np.where(u < 0.5, 1.5, 0.5)
    assert g.mean() == pytest.approx(1.0, abs=0.01)
