"""Truncated Dirichlet-process mixture over potential compliances.

The infinite stick-breaking mixture is truncated at H components.  Each
component is a unit-cube-truncated Gaussian; its normalizing constant is
estimated by Monte Carlo with a point set shared across all components
within one update pass, so the constants entering any single
Metropolis-Hastings ratio carry strongly correlated errors and the
ratio itself stays accurate.

Component means get an independence proposal centred at the component
data mean; covariances a Wishart random walk against an inverse-Wishart
base measure; the concentration an independence Gamma(1,1) proposal that
cancels the matching prior, leaving the stick likelihood ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    beta_logpdf,
    invwishart_logpdf,
    sample_invwishart,
    sample_wishart,
    wishart_logpdf,
)
from .truncmvn import batch_gaussian_logpdf, batch_log_box_mass, cube_points

__all__ = [
    "MixtureState",
    "init_mixture_state",
    "stick_break",
    "update_sticks",
    "update_assignments",
    "update_component_mean",
    "update_component_cov",
    "update_component_means",
    "update_component_covs",
    "update_concentration",
    "mixture_density",
    "log_mixture_density",
    "component_suffstats",
    "fit_mixture",
    "MixtureDraws",
]

_STICK_EPS = 1e-12
COV_PROPOSAL_DF = 1000.0


@dataclass
class MixtureState:
    """Mutable sampler state of the truncated mixture.

    ``log_c`` caches the log normalizing constants of the current
    components, always refreshed by the update passes that change
    (etas, Sigmas).
    """

    alpha: float
    wprime: np.ndarray
    w: np.ndarray
    z: np.ndarray
    etas: np.ndarray
    Sigmas: np.ndarray
    log_c: np.ndarray
    accepts: dict = field(default_factory=lambda: {"eta": 0, "sigma": 0, "alpha": 0,
                                                   "eta_n": 0, "sigma_n": 0, "alpha_n": 0})

    @property
    def H(self):
        return self.w.size

    @property
    def m(self):
        return self.etas.shape[1]

    def occupancy(self):
        return np.bincount(self.z, minlength=self.H)

    def acceptance_rates(self):
        a = self.accepts
        return {
            "eta": a["eta"] / max(a["eta_n"], 1),
            "sigma": a["sigma"] / max(a["sigma_n"], 1),
            "alpha": a["alpha"] / max(a["alpha_n"], 1),
        }


def stick_break(wprime):
    """Mixture weights from stick fractions: w_h = w'_h prod_{k<h}(1 - w'_k)."""
    wprime = np.asarray(wprime, dtype=float)
    if wprime[-1] != 1.0:
        raise ValueError("last stick fraction must be 1")
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - wprime[:-1])])
    return wprime * remaining


def update_sticks(z, H, alpha, rng):
    """Posterior Beta draws of the stick fractions given assignments."""
    counts = np.bincount(z, minlength=H)
    greater = counts[::-1].cumsum()[::-1] - counts  # number assigned above h
    wprime = np.empty(H)
    wprime[: H - 1] = rng.beta(1.0 + counts[: H - 1], alpha + greater[: H - 1])
    wprime[: H - 1] = np.clip(wprime[: H - 1], _STICK_EPS, 1.0 - _STICK_EPS)
    wprime[H - 1] = 1.0
    return wprime


def component_suffstats(d, z, H):
    """Counts, per-component means and centred scatter matrices."""
    n, m = d.shape
    counts = np.bincount(z, minlength=H).astype(float)
    sums = np.empty((H, m))
    for j in range(m):
        sums[:, j] = np.bincount(z, weights=d[:, j], minlength=H)
    safe = np.maximum(counts, 1.0)
    means = sums / safe[:, None]
    cross = np.empty((H, m, m))
    for i in range(m):
        for j in range(i, m):
            v = np.bincount(z, weights=d[:, i] * d[:, j], minlength=H)
            cross[:, i, j] = v
            cross[:, j, i] = v
    scatter = cross - counts[:, None, None] * means[:, :, None] * means[:, None, :]
    return counts, means, scatter


def update_assignments(d, state, rng):
    """Categorical redraw of the component labels (Gumbel-max in log space)."""
    logpdf = batch_gaussian_logpdf(state.etas, state.Sigmas, d)  # (H, n)
    with np.errstate(divide="ignore"):
        logits = np.log(state.w)[:, None] + state.log_c[:, None] + logpdf
    if not np.all(np.isfinite(logits.max(axis=0))):
        bad = int(np.argmin(np.isfinite(logits.max(axis=0))))
        raise FloatingPointError(f"no component has positive density at subject index {bad}")
    gumbel = -np.log(-np.log(rng.random((state.H, d.shape[0]))))
    return np.argmax(logits + gumbel, axis=0)


def _quad(sigma, v):
    return float(v @ np.linalg.solve(sigma, v))


def _mean_log_ratio(n_h, dbar, sigma, eta_cur, eta_prop, log_mass_cur, log_mass_prop):
    """Log MH ratio for the mean update (flat base measure on eta).

    Target: prod over members of the truncated-normal density; proposal
    N(dbar, Sigma/n_h).  The Gaussian quadratic terms of target and
    proposal share the same kernel, so only the mass ratio survives
    algebraically, but everything is computed explicitly.
    """
    def target(eta, log_mass):
        return -n_h * log_mass - 0.5 * n_h * _quad(sigma, eta - dbar)

    def proposal_logq(eta):
        return -0.5 * n_h * _quad(sigma, eta - dbar)

    return (target(eta_prop, log_mass_prop) - target(eta_cur, log_mass_cur)
            + proposal_logq(eta_cur) - proposal_logq(eta_prop))


def _cov_log_ratio(n_h, dbar, scatter, eta, s_cur, s_prop,
                   log_mass_cur, log_mass_prop, prop_df=COV_PROPOSAL_DF):
    """Log MH ratio for the covariance update.

    Inverse-Wishart(m, I) base measure, Wishart(prop_df, current/prop_df)
    random-walk proposal with its asymmetric-density correction.
    """
    m = s_cur.shape[0]
    eye = np.eye(m)

    def target(s, log_mass):
        dev = eta - dbar
        quad = n_h * _quad(s, dev) + float(np.trace(np.linalg.solve(s, scatter)))
        sign, logdet = np.linalg.slogdet(s)
        if sign <= 0:
            return -np.inf
        return (invwishart_logpdf(s, m, eye) - n_h * log_mass
                - 0.5 * quad - 0.5 * n_h * logdet)

    hastings = (wishart_logpdf(s_cur, prop_df, s_prop / prop_df)
                - wishart_logpdf(s_prop, prop_df, s_cur / prop_df))
    return target(s_prop, log_mass_prop) - target(s_cur, log_mass_cur) + hastings


def _mean_log_ratios_batch(counts, means, sigmas, etas_cur, etas_prop, lm_cur, lm_prop):
    """Vectorized _mean_log_ratio over components (occupied rows only valid)."""
    chol = np.linalg.cholesky(sigmas)
    zc = np.linalg.solve(chol, (etas_cur - means)[..., None])[..., 0]
    zp = np.linalg.solve(chol, (etas_prop - means)[..., None])[..., 0]
    qc = (zc * zc).sum(axis=1)
    qp = (zp * zp).sum(axis=1)
    target_diff = -counts * (lm_prop - lm_cur) - 0.5 * counts * (qp - qc)
    proposal_diff = -0.5 * counts * (qc - qp)
    return target_diff + proposal_diff


def _cov_log_ratios_batch(counts, means, scatters, etas, s_cur, s_prop,
                          lm_cur, lm_prop, prop_df=COV_PROPOSAL_DF):
    """Vectorized _cov_log_ratio over components (occupied rows only valid).

    Same quantity as the scalar version, with the Wishart/inverse-Wishart
    constants that cancel in the ratio dropped analytically.
    """
    m = s_cur.shape[-1]
    lc = np.linalg.cholesky(s_cur)
    lp = np.linalg.cholesky(s_prop)
    ld_c = 2.0 * np.log(np.diagonal(lc, axis1=1, axis2=2)).sum(axis=1)
    ld_p = 2.0 * np.log(np.diagonal(lp, axis1=1, axis2=2)).sum(axis=1)

    def tr_inv(chol_mats, mats):
        sol = np.linalg.solve(chol_mats, mats)
        sol = np.linalg.solve(np.swapaxes(chol_mats, 1, 2), sol)
        return np.trace(sol, axis1=1, axis2=2)

    dev = (etas - means)[..., None]
    q_c = (np.linalg.solve(lc, dev)[..., 0] ** 2).sum(axis=1)
    q_p = (np.linalg.solve(lp, dev)[..., 0] ** 2).sum(axis=1)
    eye = np.broadcast_to(np.eye(m), s_cur.shape)
    # inverse-Wishart(m, I) prior, likelihood mass/quadratic/determinant terms
    def target(ld, q, chol_mats, lm):
        return (
            -0.5 * (2 * m + 1) * ld
            - 0.5 * tr_inv(chol_mats, eye)
            - counts * lm
            - 0.5 * (counts * q + tr_inv(chol_mats, scatters))
            - 0.5 * counts * ld
        )

    hastings = (
        0.5 * (2.0 * prop_df - m - 1) * (ld_c - ld_p)
        - 0.5 * prop_df * (tr_inv(lp, s_cur) - tr_inv(lc, s_prop))
    )
    return target(ld_p, q_p, lp, lm_prop) - target(ld_c, q_c, lc, lm_cur) + hastings


def _members(d, z, h):
    rows = d[z == h]
    return rows.shape[0], rows


def update_component_mean(state, h, d, rng, mc_samples=2048, method="uniform"):
    """MH update of one component mean (empty component: uniform redraw)."""
    n_h, rows = _members(d, state.z, h)
    m = state.m
    if n_h == 0:
        state.etas[h] = rng.random(m)
        pts = cube_points(m, mc_samples, rng, method)
        state.log_c[h] = -float(batch_log_box_mass(state.etas[h], state.Sigmas[h], pts)[0])
        return state.etas[h]
    dbar = rows.mean(axis=0)
    sigma = state.Sigmas[h]
    chol = np.linalg.cholesky(sigma / n_h)
    prop = dbar + chol @ rng.standard_normal(m)
    pts = cube_points(m, mc_samples, rng, method)
    lm = batch_log_box_mass(np.vstack([state.etas[h], prop]),
                            np.stack([sigma, sigma]), pts)
    log_r = _mean_log_ratio(n_h, dbar, sigma, state.etas[h], prop, lm[0], lm[1])
    state.accepts["eta_n"] += 1
    if np.log(rng.random()) < log_r:
        state.etas[h] = prop
        state.log_c[h] = -lm[1]
        state.accepts["eta"] += 1
    else:
        state.log_c[h] = -lm[0]
    return state.etas[h]


def update_component_cov(state, h, d, rng, mc_samples=2048, method="uniform",
                         prop_df=COV_PROPOSAL_DF):
    """MH update of one component covariance (empty: prior redraw)."""
    n_h, rows = _members(d, state.z, h)
    m = state.m
    if n_h == 0:
        state.Sigmas[h] = sample_invwishart(m, np.eye(m), rng)
        pts = cube_points(m, mc_samples, rng, method)
        state.log_c[h] = -float(batch_log_box_mass(state.etas[h], state.Sigmas[h], pts)[0])
        return state.Sigmas[h]
    dbar = rows.mean(axis=0)
    dev = rows - dbar
    scatter = dev.T @ dev
    prop = sample_wishart(prop_df, state.Sigmas[h] / prop_df, rng)
    try:
        np.linalg.cholesky(prop)
    except np.linalg.LinAlgError:
        state.accepts["sigma_n"] += 1
        return state.Sigmas[h]
    pts = cube_points(m, mc_samples, rng, method)
    lm = batch_log_box_mass(np.vstack([state.etas[h], state.etas[h]]),
                            np.stack([state.Sigmas[h], prop]), pts)
    log_r = _cov_log_ratio(n_h, dbar, scatter, state.etas[h], state.Sigmas[h], prop,
                           lm[0], lm[1], prop_df=prop_df)
    state.accepts["sigma_n"] += 1
    if np.log(rng.random()) < log_r:
        state.Sigmas[h] = prop
        state.log_c[h] = -lm[1]
        state.accepts["sigma"] += 1
    else:
        state.log_c[h] = -lm[0]
    return state.Sigmas[h]


def update_component_means(state, d, points, rng, counts=None, means=None):
    """Batched mean pass over all components with a shared point set."""
    if counts is None or means is None:
        counts, means, _ = component_suffstats(d, state.z, state.H)
    H, m = state.H, state.m
    z_norm = rng.standard_normal((H, m))
    uniforms_empty = rng.random((H, m))
    u_accept = rng.random(H)

    occ = counts > 0
    props = np.where(occ[:, None], means, uniforms_empty).copy()
    if occ.any():
        chol = np.linalg.cholesky(state.Sigmas[occ] / counts[occ, None, None])
        props[occ] = means[occ] + np.einsum("bij,bj->bi", chol, z_norm[occ])

    lm_cur = batch_log_box_mass(state.etas, state.Sigmas, points)
    lm_prop = batch_log_box_mass(props, state.Sigmas, points)
    safe_counts = np.maximum(counts, 1.0)
    log_r = _mean_log_ratios_batch(safe_counts, means, state.Sigmas,
                                   state.etas, props, lm_cur, lm_prop)
    accept = occ & (np.log(u_accept) < log_r)
    take = accept | ~occ
    state.etas[take] = props[take]
    state.log_c[take] = -lm_prop[take]
    state.log_c[~take] = -lm_cur[~take]
    state.accepts["eta_n"] += int(occ.sum())
    state.accepts["eta"] += int(accept.sum())


def update_component_covs(state, d, points, rng, counts=None, means=None, scatters=None,
                          prop_df=COV_PROPOSAL_DF):
    """Batched covariance pass over all components with a shared point set."""
    if counts is None or means is None or scatters is None:
        counts, means, scatters = component_suffstats(d, state.z, state.H)
    H, m = state.H, state.m
    eye = np.eye(m)
    props_w = sample_wishart(prop_df, state.Sigmas / prop_df, rng, size=(H,))
    props_iw = sample_invwishart(m, eye, rng, size=(H,))
    u_accept = rng.random(H)

    occ = counts > 0
    props = np.where(occ[:, None, None], props_w, props_iw)
    lm_cur = -state.log_c  # means just ran: cache is current for these points
    lm_prop = batch_log_box_mass(state.etas, props, points)
    safe_counts = np.maximum(counts, 1.0)
    log_r = _cov_log_ratios_batch(safe_counts, means, scatters, state.etas,
                                  state.Sigmas, props, lm_cur, lm_prop, prop_df=prop_df)
    accept = occ & (np.log(u_accept) < log_r)
    take = accept | ~occ
    state.Sigmas[take] = props[take]
    state.log_c[take] = -lm_prop[take]
    state.log_c[~take] = -lm_cur[~take]
    state.accepts["sigma_n"] += int(occ.sum())
    state.accepts["sigma"] += int(accept.sum())


def update_concentration(state, rng):
    """Independence MH on alpha; Gamma(1,1) prior cancels the proposal,
    leaving the stick-likelihood ratio over the H-1 free sticks."""
    counts = state.occupancy()
    greater = counts[::-1].cumsum()[::-1] - counts
    a = 1.0 + counts[: state.H - 1]
    w = state.wprime[: state.H - 1]
    prop = rng.gamma(1.0, 1.0)
    log_r = float(
        beta_logpdf(w, a, prop + greater[: state.H - 1]).sum()
        - beta_logpdf(w, a, state.alpha + greater[: state.H - 1]).sum()
    )
    state.accepts["alpha_n"] += 1
    if np.log(rng.random()) < log_r:
        state.alpha = float(prop)
        state.accepts["alpha"] += 1
    return state.alpha


def log_mixture_density(d, state):
    """Log of the truncated finite mixture density at rows ``d``."""
    d = np.atleast_2d(np.asarray(d, dtype=float))
    out = np.full(d.shape[0], -np.inf)
    inside = np.all((d >= 0.0) & (d <= 1.0), axis=1)
    if inside.any():
        logpdf = batch_gaussian_logpdf(state.etas, state.Sigmas, d[inside])
        with np.errstate(divide="ignore"):
            logits = np.log(state.w)[:, None] + state.log_c[:, None] + logpdf
        mx = logits.max(axis=0)
        out[inside] = mx + np.log(np.exp(logits - mx[None, :]).sum(axis=0))
    return out


def mixture_density(d, state):
    val = np.exp(log_mixture_density(d, state))
    return float(val[0]) if np.asarray(d).ndim == 1 else val


def init_mixture_state(d, H, rng, alpha=1.0):
    """Starting state: means at resampled data rows, diagonal covariances
    from the marginal spread, random labels."""
    n, m = d.shape
    etas = d[rng.integers(0, n, size=H)].copy()
    var = np.maximum(d.var(axis=0), 1e-3)
    Sigmas = np.tile(np.diag(var + 0.01), (H, 1, 1))
    z = rng.integers(0, H, size=n)
    wprime = update_sticks(z, H, alpha, rng)
    w = stick_break(wprime)
    state = MixtureState(alpha=alpha, wprime=wprime, w=w, z=z,
                         etas=etas, Sigmas=Sigmas, log_c=np.zeros(H))
    return state


@dataclass
class MixtureDraws:
    """Thinned draws from a compliance-only mixture fit."""

    w: np.ndarray
    etas: np.ndarray
    Sigmas: np.ndarray
    log_c: np.ndarray
    alpha: np.ndarray
    occupancy: np.ndarray  # per-iteration occupied-component counts (all iterations)

    @property
    def n_draws(self):
        return self.w.shape[0]

    def state_at(self, i):
        return MixtureState(
            alpha=float(self.alpha[i]), wprime=None, w=self.w[i], z=None,
            etas=self.etas[i], Sigmas=self.Sigmas[i], log_c=self.log_c[i],
        )

    def posterior_mean_density(self, grid):
        """Average mixture density over the kept draws at grid rows."""
        acc = np.zeros(np.atleast_2d(grid).shape[0])
        for i in range(self.n_draws):
            acc += mixture_density(np.atleast_2d(grid), self.state_at(i))
        return acc / self.n_draws


def fit_mixture(d, H, iterations, burn_in, thin, rng,
                mc_budget=2048, mc_method="sobol"):
    """Gibbs sampler for the mixture alone, on fully observed compliances.

    Useful on its own for density estimation and for the preliminary run
    that guides the choice of H (watch the occupancy history: H should
    exceed the largest occupied count seen).
    """
    d = np.asarray(d, dtype=float)
    state = init_mixture_state(d, H, rng)
    pts_rng = _PointStream(d.shape[1], mc_budget, mc_method, rng)
    pts = pts_rng()
    state.log_c = -batch_log_box_mass(state.etas, state.Sigmas, pts)

    kept_w, kept_e, kept_s, kept_c, kept_a, occ_hist = [], [], [], [], [], []
    for it in range(iterations):
        pts = pts_rng()
        counts, means, scatters = component_suffstats(d, state.z, H)
        update_component_means(state, d, pts, rng, counts, means)
        update_component_covs(state, d, pts, rng, counts, means, scatters)
        state.z = update_assignments(d, state, rng)
        state.wprime = update_sticks(state.z, H, state.alpha, rng)
        state.w = stick_break(state.wprime)
        update_concentration(state, rng)
        occ_hist.append(int((state.occupancy() > 0).sum()))
        if it + 1 > burn_in and (it + 1 - burn_in) % thin == 0:
            kept_w.append(state.w.copy())
            kept_e.append(state.etas.copy())
            kept_s.append(state.Sigmas.copy())
            kept_c.append(state.log_c.copy())
            kept_a.append(state.alpha)
    return MixtureDraws(
        w=np.array(kept_w), etas=np.array(kept_e), Sigmas=np.array(kept_s),
        log_c=np.array(kept_c), alpha=np.array(kept_a), occupancy=np.array(occ_hist),
    )


class _PointStream:
    """Per-iteration Monte Carlo point sets for the mass estimates."""

    def __init__(self, m, budget, method, rng):
        self.m = m
        self.budget = budget
        self.method = method
        self.rng = rng
        if method == "sobol":
            from scipy.stats import qmc

            self.engine = qmc.Sobol(d=m, scramble=True, seed=rng)
        elif method != "uniform":
            raise ValueError(f"unknown mc method {method!r}")

    def __call__(self):
        if self.method == "sobol":
            return self.engine.random(self.budget)
        return self.rng.random((self.budget, self.m))
