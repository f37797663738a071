"""Imputation of latent potential compliances (the data-augmentation step).

For a subject on sequence k assigned to mixture component h, the
conditional posterior of the missing coordinates combines the
component's truncated-Gaussian prior, conditioned on the observed
coordinates, with the outcome likelihood, which is linear in the missing
coordinates (guaranteed by design validation).  Completing the square
gives another unit-cube truncated Gaussian:

    precision  = C^{-1} + b b^T / sigma2_k
    mean       solves  precision mu = C^{-1} mu_c + b (y - offset) / sigma2_k

where (mu_c, C) are the conditioned prior moments and b holds each
missing coordinate's effective outcome slope.  Missing coordinates that
do not enter the sequence's outcome model get b = 0 and are drawn from
the conditioned prior alone; the mixture still needs complete vectors.
"""

from __future__ import annotations

import logging

import numpy as np

from .distributions import truncnorm_sample
from .truncmvn import TruncatedGaussian, conditional

__all__ = ["initialize_missing", "impute_missing", "impute_all"]

log = logging.getLogger(__name__)

_JITTER = 1e-10


def initialize_missing(dataset, design, rng, method="uniform"):
    """Full (n, m) compliance matrix with starting values at latent entries.

    ``method="uniform"`` draws U[0,1]; ``"empirical"`` resamples the
    coordinate's observed values (uniform fallback where a coordinate is
    observed nowhere).
    """
    d = dataset.d_obs.copy()
    missing = np.isnan(d)
    if method == "uniform":
        fill = rng.random(d.shape)
        d[missing] = fill[missing]
    elif method == "empirical":
        for j in range(design.m):
            col_missing = missing[:, j]
            if not col_missing.any():
                continue
            pool = dataset.d_obs[~missing[:, j], j]
            if pool.size == 0:
                d[col_missing, j] = rng.random(col_missing.sum())
            else:
                d[col_missing, j] = rng.choice(pool, size=col_missing.sum(), replace=True)
    else:
        raise ValueError(f"unknown initialization method {method!r}")
    return d


def _likelihood_terms(design, k, beta, d_row_obs):
    """Effective slopes over the missing coordinates and the observed-part
    offset of the outcome mean, for a single subject."""
    obs_mask = design.observed_mask(k)
    mis = np.nonzero(~obs_mask)[0]
    pos = {j: t for t, j in enumerate(mis)}
    b = np.zeros(mis.size)
    offset = beta[0]
    for c, idx in enumerate(design.column_indices[k - 1], start=1):
        missing_here = [j for j in idx if not obs_mask[j]]
        prod_obs = 1.0
        for j in idx:
            if obs_mask[j]:
                prod_obs *= d_row_obs[j]
        if not missing_here:
            offset += beta[c] * prod_obs
        else:
            b[pos[missing_here[0]]] += beta[c] * prod_obs
    return mis, b, offset


def impute_missing(d_row_obs, k, y, params, eta, sigma, rng, sweeps=10):
    """Draw the missing coordinates for one subject.

    ``d_row_obs`` is the full coordinate vector with NaN at latent
    entries; returns the imputed values in the order of the missing
    coordinates.
    """
    design = params.design
    obs_mask = design.observed_mask(k)
    mis, b, offset = _likelihood_terms(design, k, params.beta_for(k), d_row_obs)
    if mis.size == 0:
        return np.empty(0)
    prior = TruncatedGaussian(np.asarray(eta, float), np.asarray(sigma, float))
    obs_idx = np.nonzero(obs_mask)[0]
    if obs_idx.size:
        cond = conditional(prior, obs_idx, d_row_obs[obs_idx])
    else:
        cond = TruncatedGaussian(prior.eta, prior.Sigma)
    c_inv = np.linalg.inv(cond.Sigma)
    sigma2 = params.sigma2[k - 1]
    prec = c_inv + np.outer(b, b) / sigma2
    rhs = c_inv @ cond.eta + b * (y - offset) / sigma2
    mu, prec = _posterior_moments(prec, rhs)
    return _sweep_sample(mu[None, :], prec[None, :, :], rng, sweeps)[0]


def _posterior_moments(prec, rhs):
    try:
        mu = np.linalg.solve(prec, rhs)
    except np.linalg.LinAlgError:
        log.warning("imputation precision not PD; adding %g jitter", _JITTER)
        prec = prec + _JITTER * np.eye(prec.shape[0])
        mu = np.linalg.solve(prec, rhs)
    return mu, prec


def _sweep_sample(mu, prec, rng, sweeps):
    """Coordinate-Gibbs draws of truncated normals, batched over rows.

    ``mu`` is (n, M), ``prec`` (n, M, M).  Starts at the cube-clamped
    mean; with M = 1 the first inverse-CDF draw is already exact.
    """
    n, m = mu.shape
    x = np.clip(mu, 0.0, 1.0)
    n_sweeps = sweeps if m > 1 else 1
    for _ in range(n_sweeps):
        for j in range(m):
            pj = prec[:, j, :]
            var_j = 1.0 / prec[:, j, j]
            dev = x - mu
            r = np.einsum("nl,nl->n", pj, dev) - prec[:, j, j] * dev[:, j]
            mu_cond = mu[:, j] - var_j * r
            x[:, j] = truncnorm_sample(mu_cond, var_j, 0.0, 1.0, rng.random(n))
    return x


def impute_all(d_full, dataset, design, state, params, rng, sweeps=10):
    """One augmentation pass over every subject, in place on ``d_full``.

    Vectorized: the conditioned-prior gain and precision depend only on
    (component, sequence), so they are built once per pair and gathered
    per subject; the truncated-normal sweeps then run over all subjects
    simultaneously (the random-number stream is consumed in a fixed
    pattern independent of the component occupancy).
    """
    n = dataset.n
    etas, sigmas = state.etas, state.Sigmas
    mis_sizes = [int((~design.observed_mask(k)).sum()) for k in range(1, design.K + 1)]
    m_max = max(mis_sizes)
    if m_max == 0:
        return d_full

    has_missing = np.zeros(n, dtype=bool)
    mu_all = np.full((n, m_max), 0.5)
    prec_all = np.tile(np.eye(m_max), (n, 1, 1))

    for k in range(1, design.K + 1):
        rows = dataset.rows_for_sequence(k)
        obs_mask = design.observed_mask(k)
        mis = np.nonzero(~obs_mask)[0]
        obs = np.nonzero(obs_mask)[0]
        if rows.size == 0 or mis.size == 0:
            continue
        has_missing[rows] = True
        mk = mis.size

        # conditioned prior per component, shared by all subjects of (h, k)
        s_mm = sigmas[:, mis[:, None], mis[None, :]]
        if obs.size:
            s_oo = sigmas[:, obs[:, None], obs[None, :]]
            s_mo = sigmas[:, mis[:, None], obs[None, :]]
            gain = np.linalg.solve(s_oo, s_mo.transpose(0, 2, 1)).transpose(0, 2, 1)
            c = s_mm - gain @ s_mo.transpose(0, 2, 1)
        else:
            gain = None
            c = s_mm
        c = 0.5 * (c + c.transpose(0, 2, 1))
        try:
            c_inv = np.linalg.inv(c)
        except np.linalg.LinAlgError:
            log.warning("imputation prior covariance not PD; adding %g jitter", _JITTER)
            c_inv = np.linalg.inv(c + _JITTER * np.eye(mk))

        zr = state.z[rows]
        if obs.size:
            dev = dataset.d_obs[rows][:, obs] - etas[zr][:, obs]
            mu_c = etas[zr][:, mis] + np.einsum("nmo,no->nm", gain[zr], dev)
        else:
            mu_c = etas[zr][:, mis].copy()

        b, offset = _likelihood_terms_batch(design, k, params.beta_for(k),
                                            dataset.d_obs[rows], mis)
        sigma2 = params.sigma2[k - 1]
        prec = c_inv[zr] + b[:, :, None] * b[:, None, :] / sigma2
        rhs = np.einsum("nij,nj->ni", c_inv[zr], mu_c) \
            + b * ((dataset.y[rows] - offset) / sigma2)[:, None]
        try:
            mu = np.linalg.solve(prec, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            log.warning("imputation precision not PD; adding %g jitter", _JITTER)
            prec = prec + _JITTER * np.eye(mk)
            mu = np.linalg.solve(prec, rhs[..., None])[..., 0]

        mu_all[rows[:, None], np.arange(mk)[None, :]] = mu
        prec_all[rows[:, None, None], np.arange(mk)[None, :, None],
                 np.arange(mk)[None, None, :]] = prec

    active = np.nonzero(has_missing)[0]
    x = _sweep_sample(mu_all[active], prec_all[active], rng, sweeps)
    draws = np.full((n, m_max), np.nan)
    draws[active] = x
    for k in range(1, design.K + 1):
        rows = dataset.rows_for_sequence(k)
        mis = np.nonzero(~design.observed_mask(k))[0]
        if rows.size == 0 or mis.size == 0:
            continue
        d_full[rows[:, None], mis[None, :]] = draws[rows][:, : mis.size]
    return d_full


def _likelihood_terms_batch(design, k, beta, d_obs_rows, mis):
    """Vectorized effective slopes (n_k, |mis|) and offsets (n_k,)."""
    obs_mask = design.observed_mask(k)
    pos = {j: t for t, j in enumerate(mis)}
    n = d_obs_rows.shape[0]
    b = np.zeros((n, mis.size))
    offset = np.full(n, beta[0])
    for c, idx in enumerate(design.column_indices[k - 1], start=1):
        missing_here = [j for j in idx if not obs_mask[j]]
        prod_obs = np.ones(n)
        for j in idx:
            if obs_mask[j]:
                prod_obs = prod_obs * d_obs_rows[:, j]
        if not missing_here:
            offset += beta[c] * prod_obs
        else:
            b[:, pos[missing_here[0]]] += beta[c] * prod_obs
    return b, offset
