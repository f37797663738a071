"""Low-level samplers and log-densities shared across the package.

Everything here is pure: outputs depend only on the arguments and the
supplied ``numpy.random.Generator``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, ndtr, ndtri

__all__ = [
    "expit",
    "truncnorm_sample",
    "wishart_logpdf",
    "invwishart_logpdf",
    "sample_wishart",
    "sample_invwishart",
    "beta_logpdf",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


def expit(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


def truncnorm_sample(mu, var, lo, hi, u):
    """Inverse-CDF draw from N(mu, var) truncated to [lo, hi].

    ``u`` are uniforms on (0,1); all arguments broadcast.  Intervals right
    of the mean are reflected so the CDF values stay representable, and
    intervals so deep in a tail that even that underflows fall back to
    the exponential tail approximation anchored at the nearer bound.
    """
    mu = np.asarray(mu, dtype=float)
    sd = np.sqrt(np.asarray(var, dtype=float))
    a = (lo - mu) / sd
    b = (hi - mu) / sd
    flip = (a + b) > 0  # work on the side where ndtr keeps precision

    a_eff = np.where(flip, -b, a)
    b_eff = np.where(flip, -a, b)
    u_eff = np.where(flip, 1.0 - u, u)

    pa = ndtr(a_eff)
    pb = ndtr(b_eff)
    p = pa + u_eff * (pb - pa)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = ndtri(np.clip(p, 1e-320, 1.0 - 1e-16))
    z = np.clip(z, a_eff, b_eff)

    degenerate = ~(pb > pa)
    if np.any(degenerate):
        # exponential approximation to the tail beyond +/-38 sd: reflect to
        # the right-tail frame [A, B], A > 0, draw t ~ Exp(A) given t <= B-A
        big_a = -b_eff
        big_b = -a_eff
        rate = np.maximum(big_a, 1.0)
        span = -np.expm1(-rate * (big_b - big_a))
        with np.errstate(invalid="ignore"):
            t = big_a - np.log1p(-(1.0 - u_eff) * span) / rate
        z = np.where(degenerate, -np.clip(t, big_a, big_b), z)

    z = np.where(flip, -z, z)
    x = mu + sd * z
    return np.clip(x, lo, hi) if np.ndim(x) else float(np.clip(x, lo, hi))


def _logdet_chol(L):
    d = np.diagonal(L, axis1=-2, axis2=-1)
    return 2.0 * np.log(d).sum(axis=-1)


def _multigammaln(a, p):
    j = np.arange(1, p + 1)
    return 0.25 * p * (p - 1) * np.log(np.pi) + gammaln(a + 0.5 * (1 - j)).sum()


def wishart_logpdf(x, df, scale):
    """Log-density of Wishart(df, scale) at the SPD matrix ``x``."""
    x = np.asarray(x, dtype=float)
    scale = np.asarray(scale, dtype=float)
    p = x.shape[-1]
    lx = np.linalg.cholesky(x)
    ls = np.linalg.cholesky(scale)
    # tr(scale^{-1} x) via triangular solves
    sol = np.linalg.solve(ls, lx)
    tr = (sol * sol).sum(axis=(-2, -1))
    return (
        0.5 * (df - p - 1) * _logdet_chol(lx)
        - 0.5 * tr
        - 0.5 * df * p * np.log(2.0)
        - 0.5 * df * _logdet_chol(ls)
        - _multigammaln(0.5 * df, p)
    )


def invwishart_logpdf(x, df, scale):
    """Log-density of Inverse-Wishart(df, scale) at the SPD matrix ``x``."""
    x = np.asarray(x, dtype=float)
    scale = np.asarray(scale, dtype=float)
    p = x.shape[-1]
    lx = np.linalg.cholesky(x)
    ls = np.linalg.cholesky(scale)
    sol = np.linalg.solve(lx, ls)
    tr = (sol * sol).sum(axis=(-2, -1))  # tr(scale x^{-1})
    return (
        0.5 * df * _logdet_chol(ls)
        - 0.5 * (df + p + 1) * _logdet_chol(lx)
        - 0.5 * tr
        - 0.5 * df * p * np.log(2.0)
        - _multigammaln(0.5 * df, p)
    )


def _bartlett_factor(df, p, size, rng):
    """Lower-triangular Bartlett factors A with W = A A^T ~ Wishart(df, I)."""
    chi_df = df - np.arange(p)
    a = np.zeros(size + (p, p))
    diag = np.sqrt(rng.chisquare(chi_df, size=size + (p,)))
    idx = np.arange(p)
    a[..., idx, idx] = diag
    tril = np.tril_indices(p, k=-1)
    if tril[0].size:
        a[..., tril[0], tril[1]] = rng.standard_normal(size + (tril[0].size,))
    return a


def sample_wishart(df, scale, rng, size=()):
    """Draw from Wishart(df, scale) via the Bartlett decomposition.

    ``scale`` may carry leading batch dimensions matching ``size``.
    """
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[-1]
    if df < p:
        raise ValueError(f"Wishart df {df} below dimension {p}")
    size = tuple(size)
    ls = np.linalg.cholesky(scale)
    a = _bartlett_factor(df, p, size, rng)
    la = ls @ a
    return la @ np.swapaxes(la, -1, -2)


def sample_invwishart(df, scale, rng, size=()):
    """Draw from Inverse-Wishart(df, scale)."""
    scale = np.asarray(scale, dtype=float)
    w = sample_wishart(df, np.linalg.inv(scale), rng, size=size)
    out = np.linalg.inv(w)
    return 0.5 * (out + np.swapaxes(out, -1, -2))  # inv() is not bitwise symmetric


def beta_logpdf(x, a, b):
    x = np.asarray(x, dtype=float)
    return (
        (a - 1.0) * np.log(x)
        + (b - 1.0) * np.log1p(-x)
        + gammaln(a + b)
        - gammaln(a)
        - gammaln(b)
    )
