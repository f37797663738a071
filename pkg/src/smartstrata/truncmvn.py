"""Multivariate normal distributions truncated to the unit hypercube.

A ``TruncatedGaussian`` is parameterised by its pre-truncation mean and
covariance; the support is always [0,1]^m.  The normalizing constant
(the reciprocal of the Gaussian mass inside the cube) has no closed form
and is estimated by Monte Carlo, either with uniform points over the
cube (default), a scrambled Sobol point set, or by sampling the Gaussian
itself and counting the in-cube fraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .distributions import truncnorm_sample

__all__ = [
    "TruncatedGaussian",
    "normalizing_constant",
    "log_box_mass",
    "log_density",
    "sample",
    "conditional",
    "batch_log_box_mass",
    "batch_gaussian_logpdf",
    "cube_points",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class TruncatedGaussian:
    """N(eta, Sigma) restricted to [0,1]^m."""

    eta: np.ndarray
    Sigma: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if sigma.shape != (eta.size, eta.size):
            raise ValueError(f"Sigma shape {sigma.shape} does not match mean length {eta.size}")
        if not np.allclose(sigma, sigma.T):
            raise ValueError("Sigma must be symmetric")
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise ValueError("Sigma must be positive definite") from exc
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "Sigma", sigma)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.eta.size

    def logpdf_untruncated(self, x):
        """Gaussian log-density, ignoring the truncation."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.linalg.solve(self._chol, (x - self.eta).T)
        quad = (z * z).sum(axis=0)
        logdet = 2.0 * np.log(np.diag(self._chol)).sum()
        out = -0.5 * (quad + self.dim * _LOG_2PI + logdet)
        return out if out.size > 1 else float(out[0])


def batch_gaussian_logpdf(etas, sigmas, x):
    """(B, N) matrix of N(x_n | eta_b, Sigma_b) log-densities.

    The triangular factors are inverted once per batch entry so the bulk
    of the work is a single batched matmul.
    """
    etas = np.atleast_2d(np.asarray(etas, dtype=float))
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.ndim == 2:
        sigmas = sigmas[None]
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m = etas.shape[1]
    chol = np.linalg.cholesky(sigmas)
    cinv = np.linalg.inv(chol)
    # z = L^{-1} (x - eta): split into the point part and the mean shift
    zx = cinv @ x.T[None, :, :]                      # (B, m, N)
    ve = np.einsum("bij,bj->bi", cinv, etas)         # (B, m)
    quad = (
        np.einsum("bmn,bmn->bn", zx, zx)
        - 2.0 * np.einsum("bm,bmn->bn", ve, zx)
        + (ve * ve).sum(axis=1)[:, None]
    )
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    return -0.5 * (quad + m * _LOG_2PI) - 0.5 * logdet[:, None]


def batch_log_box_mass(etas, sigmas, points):
    """log of the [0,1]^m Gaussian mass for a batch of (eta, Sigma) pairs.

    ``points`` is a shared (P, m) set of uniform cube points; sharing it
    across the batch makes ratios of the resulting estimates far more
    accurate than independent estimates would be.
    """
    logpdf = batch_gaussian_logpdf(etas, sigmas, points)
    mx = logpdf.max(axis=1)
    return mx + np.log(np.mean(np.exp(logpdf - mx[:, None]), axis=1))


def cube_points(m, mc_samples, rng, method="uniform"):
    """Monte Carlo point set over [0,1]^m for mass estimation."""
    if method == "uniform":
        return rng.random((mc_samples, m))
    if method == "sobol":
        eng = qmc.Sobol(d=m, scramble=True, seed=rng)
        return eng.random(mc_samples)
    raise ValueError(f"unknown point-set method {method!r}")


def log_box_mass(tg, mc_samples=10_000, rng=None, method="uniform"):
    """Monte Carlo estimate of log P(X in [0,1]^m), X ~ N(eta, Sigma)."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    if rng is None:
        raise ValueError("an explicit rng is required for reproducibility")
    if method == "gaussian":
        # importance sample from the Gaussian itself: mass = E[1_cube]
        z = rng.standard_normal((mc_samples, tg.dim))
        x = tg.eta + z @ tg._chol.T
        frac = np.mean(np.all((x >= 0.0) & (x <= 1.0), axis=1))
        if frac == 0.0:
            raise FloatingPointError("no Gaussian samples landed in the cube; increase mc_samples")
        return float(np.log(frac))
    pts = cube_points(tg.dim, mc_samples, rng, method=method)
    return float(batch_log_box_mass(tg.eta, tg.Sigma, pts)[0])


def normalizing_constant(tg, mc_samples=10_000, rng=None, method="uniform"):
    """c such that c * N(x | eta, Sigma) integrates to 1 over the cube."""
    return float(np.exp(-log_box_mass(tg, mc_samples=mc_samples, rng=rng, method=method)))


def log_density(tg, c, d):
    """log of c * N(d | eta, Sigma) on the cube, -inf outside."""
    if c <= 0:
        raise ValueError("normalizing constant must be positive")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0.0) or np.any(d > 1.0):
        return -np.inf
    return float(np.log(c) + tg.logpdf_untruncated(d))


def sample(tg, rng, size=None, sweeps=10):
    """Draw from the truncated distribution by coordinate-wise Gibbs.

    Each draw runs an independent chain of ``sweeps`` full sweeps started
    at the cube-clamped pre-truncation mean; in one dimension the first
    inverse-CDF draw is already exact.  Returns shape (m,) for
    ``size=None`` else (size, m).
    """
    n = 1 if size is None else int(size)
    m = tg.dim
    prec = np.linalg.inv(tg.Sigma)
    x = np.tile(np.clip(tg.eta, 0.0, 1.0), (n, 1))
    for _ in range(max(1, sweeps) if m > 1 else 1):
        for j in range(m):
            var_j = 1.0 / prec[j, j]
            others = np.delete(np.arange(m), j)
            dev = (x[:, others] - tg.eta[others]) @ prec[j, others] if m > 1 else 0.0
            mu_j = tg.eta[j] - var_j * dev
            x[:, j] = truncnorm_sample(mu_j, var_j, 0.0, 1.0, rng.random(n))
    return x[0] if size is None else x


def conditional(tg, observed_indices, observed_values):
    """Distribution of the remaining coordinates given observed ones.

    Returns a ``TruncatedGaussian`` over the complementary coordinates
    whose pre-truncation moments follow the usual Gaussian conditioning
    (Schur complement) identities; its support is the corresponding
    sub-cube.
    """
    obs = np.asarray(observed_indices, dtype=int)
    vals = np.asarray(observed_values, dtype=float)
    if obs.size != np.unique(obs).size:
        raise ValueError("observed indices must be distinct")
    if np.any(vals < 0.0) or np.any(vals > 1.0):
        raise ValueError("observed values must lie in [0,1]")
    mis = np.setdiff1d(np.arange(tg.dim), obs)
    if mis.size == 0:
        raise ValueError("conditioning on every coordinate leaves nothing to model")
    s_oo = tg.Sigma[np.ix_(obs, obs)]
    s_mo = tg.Sigma[np.ix_(mis, obs)]
    try:
        gain = np.linalg.solve(s_oo, s_mo.T).T
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular conditioning block") from exc
    eta_c = tg.eta[mis] + gain @ (vals - tg.eta[obs])
    sigma_c = tg.Sigma[np.ix_(mis, mis)] - gain @ s_mo.T
    sigma_c = 0.5 * (sigma_c + sigma_c.T)
    return TruncatedGaussian(eta_c, sigma_c)
