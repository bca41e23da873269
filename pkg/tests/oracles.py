"""Independent reference computations used as test oracles.

Nothing here shares code with the package: likelihood products are summed
explicitly over every candidate change point, integrals go through scipy
quadrature, and the printed closed forms are transcribed literally.
"""

import math

import numpy as np
from scipy import integrate, stats


def normal_pdf(z, mu, var):
    return stats.norm(mu, math.sqrt(var)).pdf(z)


def brute_log_ratios(ells):
    """For each n, the vector log(L_n^theta / L_n) for theta = 1..n (explicit suffix sums)."""
    out = []
    for n in range(1, len(ells) + 1):
        out.append(np.array([sum(ells[t - 1:n]) for t in range(1, n + 1)]))
    return out


def brute_cusum(ells):
    return np.array([max(v) for v in brute_log_ratios(ells)])


def brute_sr(ells):
    return np.array([math.log(sum(math.exp(x) for x in v)) for v in brute_log_ratios(ells)])


def brute_pp(ells, p):
    res = []
    for n, v in enumerate(brute_log_ratios(ells), 1):
        num = sum(math.exp(v[t - 1]) * p * (1 - p) ** (t - 1) for t in range(1, n + 1))
        res.append(math.log(num / (1 - p) ** n))
    return np.array(res)


def quad_marginal(z):
    """log of integral over mu of prod N(z_i | mu, 1) * N(mu | 0, 1)."""
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        return 0.0
    # Integrate relative to the peak for numerical range.
    centre = z.sum() / (z.size + 1)

    def f(mu):
        return np.prod(stats.norm.pdf(z, mu, 1.0)) * stats.norm.pdf(mu, 0.0, 1.0)

    val, _ = integrate.quad(f, -10.0, 10.0, points=[centre], epsabs=0, epsrel=1e-12, limit=200)
    return math.log(val)


def printed_log_nocp(z):
    """The closed form for the no-change marginal exactly as typeset (with its extra sqrt(2 pi))."""
    z = np.asarray(z, dtype=float)
    n = z.size
    zbar = z.mean()
    z2bar = (z**2).mean()
    return (
        n * math.log(1 / math.sqrt(2 * math.pi))
        + 0.5 * math.log(2 * math.pi / (n + 1))
        - n * (z2bar - n / (n + 1) * zbar**2) / 2
    )


def printed_log_cp(z, theta):
    """The closed form for the split marginal exactly as typeset."""
    z = np.asarray(z, dtype=float)
    n = z.size
    pre = z[: theta - 1]
    post = z[theta - 1:]
    pre_bar = pre.mean() if pre.size else 0.0
    post_bar = post.mean()
    z2bar = (z**2).mean()
    inner = z2bar - (
        (theta - 1) ** 2 / (n * theta) * pre_bar**2
        + (n - theta + 1) ** 2 / (n * (n - theta + 2)) * post_bar**2
    )
    return -0.5 * math.log((2 * math.pi) ** (n - 2) * theta * (n - theta + 2)) - n * inner / 2


def mixture_quad(p):
    val, _ = integrate.quad(lambda e: e * p ** (e - 1), 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)
    return val
