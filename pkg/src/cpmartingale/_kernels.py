"""Compiled trajectory kernels used by the Monte Carlo harness.

Each kernel mirrors an online detector from the pure-Python modules and is
cross-checked against it in the test suite. Kernels stop as soon as the
statistic reaches ``stop`` (the largest threshold of interest), returning the
trajectory up to and including that step.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

BET_CONSTANT, BET_MIXTURE, BET_KERNEL, BET_PRECOMPUTED = 0, 1, 2, 3
BET_CODES = {
    "constant": BET_CONSTANT,
    "mixture": BET_MIXTURE,
    "kernel": BET_KERNEL,
    "precomputed": BET_PRECOMPUTED,
}

# Keep in sync with betting.py.
_P_MIN = 1e-12
_FLOOR = 1e-6
_BW_FLOOR = 0.05
_SQRT_2PI = math.sqrt(2.0 * math.pi)
_SQRT_2 = math.sqrt(2.0)


@njit(cache=True)
def knn_scores_sorted(train, z, k):
    m = train.shape[0]
    out = np.empty(z.shape[0])
    for j in range(z.shape[0]):
        x = z[j]
        hi = np.searchsorted(train, x)
        lo = hi - 1
        total = 0.0
        for _ in range(k):
            if lo < 0:
                total += train[hi] - x
                hi += 1
            elif hi >= m:
                total += x - train[lo]
                lo -= 1
            elif x - train[lo] <= train[hi] - x:
                total += x - train[lo]
                lo -= 1
            else:
                total += train[hi] - x
                hi += 1
        out[j] = total / k
    return out


@njit(cache=True)
def _mixture(p):
    if p == 0.0:
        p = _P_MIN
    a = math.log(p)
    if abs(a) < 1e-3:
        return 0.5 - a / 6.0 + a * a / 24.0 - a * a * a / 120.0
    return 1.0 / a + (1.0 - p) / (p * a * a)


@njit(cache=True)
def _kde_value(hist, count, p):
    if count == 0:
        return 1.0
    mean = 0.0
    for i in range(count):
        mean += hist[i]
    mean /= count
    sd = 0.0
    if count > 1:
        ss = 0.0
        for i in range(count):
            ss += (hist[i] - mean) ** 2
        sd = math.sqrt(ss / (count - 1))
    h = max(_BW_FLOOR, 1.06 * sd * count ** (-0.2))
    dens = 0.0
    mass = 0.0
    s = h * _SQRT_2
    for i in range(count):
        x = hist[i]
        for c in (-x, x, 2.0 - x):
            u = (p - c) / h
            dens += math.exp(-0.5 * u * u)
            mass += 0.5 * (math.erf((1.0 - c) / s) - math.erf(-c / s))
    dens /= count * h * _SQRT_2PI
    mass /= count
    return (1.0 - _FLOOR) * dens / mass + _FLOOR


@njit(cache=True)
def _grid_value(grid_vals, p):
    g = grid_vals.shape[0] - 1
    x = p * g
    i = int(math.floor(x))
    if i >= g:
        return grid_vals[g]
    if i < 0:
        return grid_vals[0]
    w = x - i
    return grid_vals[i] * (1.0 - w) + grid_vals[i + 1] * w


@njit(cache=True)
def _bet(kind, p, hist, count, grid_vals):
    if kind == BET_CONSTANT:
        return 1.5 if p < 0.5 else 0.5
    if kind == BET_MIXTURE:
        return _mixture(p)
    if kind == BET_KERNEL:
        return _kde_value(hist, count, p)
    return _grid_value(grid_vals, p)


@njit(cache=True)
def icm_trajectory(ranks, n_unique, u, bet_kind, window, grid_vals, stop):
    """Cut statistic, log-martingale and p-values for dense score ranks.

    ``ranks[i]`` is the 0-based rank of score ``i`` among the distinct scores
    of the stream; a Fenwick tree over ranks gives O(log n) rank counts.
    """
    horizon = ranks.shape[0]
    tree = np.zeros(n_unique + 1, dtype=np.int64)
    c_out = np.empty(horizon)
    s_out = np.empty(horizon)
    p_out = np.empty(horizon)
    hist = np.empty(max(window, 1))
    count = 0
    head = 0
    log_s = 0.0
    c = 0.0
    last = horizon
    for n in range(1, horizon + 1):
        r = ranks[n - 1] + 1
        j = r
        while j <= n_unique:
            tree[j] += 1
            j += j & (-j)
        le = 0
        j = r
        while j > 0:
            le += tree[j]
            j -= j & (-j)
        lt = 0
        j = r - 1
        while j > 0:
            lt += tree[j]
            j -= j & (-j)
        p = ((n - le) + u[n - 1] * (le - lt)) / n
        g = _bet(bet_kind, p, hist, count, grid_vals)
        if bet_kind == BET_KERNEL:
            hist[head] = p
            head = (head + 1) % window
            if count < window:
                count += 1
        log_g = math.log(g)
        log_s += log_g
        c = max(0.0, c + log_g)
        c_out[n - 1] = c
        s_out[n - 1] = log_s
        p_out[n - 1] = p
        if c >= stop:
            last = n
            break
    return c_out[:last], s_out[:last], p_out[:last]


@njit(cache=True)
def full_cm_trajectory(z, u, bet_kind, window, grid_vals, stop):
    """Transductive mean-distance conformal martingale (O(n) per step)."""
    horizon = z.shape[0]
    c_out = np.empty(horizon)
    s_out = np.empty(horizon)
    p_out = np.empty(horizon)
    hist = np.empty(max(window, 1))
    count = 0
    head = 0
    log_s = 0.0
    c = 0.0
    total = 0.0
    last = horizon
    for n in range(1, horizon + 1):
        total += z[n - 1]
        if n == 1:
            p = u[0]
        else:
            alpha = abs(z[n - 1] - (total - z[n - 1]) / (n - 1))
            greater = 0
            equal = 0
            for i in range(n):
                a = abs(z[i] - (total - z[i]) / (n - 1))
                if a > alpha:
                    greater += 1
                elif a == alpha:
                    equal += 1
            p = (greater + u[n - 1] * equal) / n
        g = _bet(bet_kind, p, hist, count, grid_vals)
        if bet_kind == BET_KERNEL:
            hist[head] = p
            head = (head + 1) % window
            if count < window:
                count += 1
        log_g = math.log(g)
        log_s += log_g
        c = max(0.0, c + log_g)
        c_out[n - 1] = c
        s_out[n - 1] = log_s
        p_out[n - 1] = p
        if c >= stop:
            last = n
            break
    return c_out[:last], s_out[:last], p_out[:last]


@njit(cache=True)
def _log_add(a, b):
    if a < b:
        a, b = b, a
    if a == -np.inf:
        return -np.inf
    return a + math.log1p(math.exp(b - a))


@njit(cache=True)
def classical_trajectory(ells, kind, p, stop):
    """kind: 0 CUSUM, 1 Shiryaev-Roberts, 2 posterior probability (log domain)."""
    horizon = ells.shape[0]
    out = np.empty(horizon)
    w = -np.inf
    log_p = math.log(p)
    log_q = math.log1p(-p)
    last = horizon
    for n in range(horizon):
        ell = ells[n]
        if kind == 0:
            w = ell + max(w, 0.0) if n > 0 else ell
        elif kind == 1:
            w = _log_add(w, 0.0) + ell
        else:
            w = ell + _log_add(w, log_p) - log_q
        out[n] = w
        if w >= stop:
            last = n + 1
            break
    return out[:last]


@njit(cache=True)
def _seg(length, s1, s2, half_log_2pi):
    if length == 0:
        return 0.0
    return -length * half_log_2pi - 0.5 * math.log1p(length) - 0.5 * (s2 - s1 * s1 / (length + 1.0))


@njit(cache=True)
def oracle_trajectory(z, kind, p, stop):
    """kind: 0 CUSUM oracle, 1 S-R oracle, 2 posterior oracle."""
    horizon = z.shape[0]
    half = 0.5 * math.log(2.0 * math.pi)
    s1 = np.zeros(horizon + 1)
    s2 = np.zeros(horizon + 1)
    for i in range(horizon):
        s1[i + 1] = s1[i] + z[i]
        s2[i + 1] = s2[i] + z[i] * z[i]
    # Prefix marginals log L(z_1..z_{theta-1}) do not depend on n.
    pre = np.empty(horizon + 1)
    for t in range(1, horizon + 1):
        pre[t] = _seg(t - 1, s1[t - 1], s2[t - 1], half)
    log_p = math.log(p)
    log_q = math.log1p(-p)
    terms = np.empty(horizon)
    out = np.empty(horizon)
    last = horizon
    for n in range(1, horizon + 1):
        nocp = _seg(n, s1[n], s2[n], half)
        top = -np.inf
        for t in range(1, n + 1):
            v = pre[t] + _seg(n - t + 1, s1[n] - s1[t - 1], s2[n] - s2[t - 1], half)
            if kind == 2:
                v += log_p + (t - 1) * log_q
            terms[t - 1] = v
            if v > top:
                top = v
        if kind == 0:
            stat = top - nocp
        else:
            acc = 0.0
            for t in range(n):
                acc += math.exp(terms[t] - top)
            stat = top + math.log(acc) - nocp
            if kind == 2:
                stat -= n * log_q
        out[n - 1] = stat
        if stat >= stop:
            last = n
            break
    return out[:last]
