"""Outcome and response models.

Outcome coefficients live in a single global vector over the design's
free coefficient slots (equality-constrained slots share one entry), so
constraint preservation is structural rather than enforced after the
fact.  Given the residual variances, the flat-prior conditional of the
global vector is Gaussian around the precision-weighted pooled
least-squares fit; given the coefficients, each sequence's variance is a
scaled inverse chi-square draw off its own residuals.

The stage-1 response indicator is a Bayesian logistic regression with a
flat prior, sampled by random-walk Metropolis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import INTERCEPT
from .distributions import expit

__all__ = [
    "OutcomeParams",
    "ResponseParams",
    "CollinearityError",
    "draw_coefficients",
    "draw_variances",
    "draw_outcome_params",
    "predict_mean",
    "logistic_mh",
    "draw_response_params",
    "response_prob",
    "ResponseSampler",
]


class CollinearityError(RuntimeError):
    """Pooled regression system is rank deficient."""


@dataclass(frozen=True)
class OutcomeParams:
    """Per-sequence linear-model parameters tied through the design.

    ``theta`` holds one value per free coefficient; ``beta_for(k)``
    expands it to the sequence-k coefficient vector (intercept first).
    """

    design: object
    theta: np.ndarray
    sigma2: np.ndarray

    def beta_for(self, k):
        return self.theta[self.design.coef_maps[k - 1]]


@dataclass(frozen=True)
class ResponseParams:
    """Logistic response-model coefficients.

    Variant "a4": one model on (1, d11, d12, a1).  Variant "a5": separate
    per-arm models on (1, own-branch stage-1 compliance).
    """

    variant: str
    gamma: dict

    def coefficients(self, arm=None):
        if self.variant == "a4":
            return self.gamma["all"]
        return self.gamma[int(arm)]


def _pooled_system(dataset, d_full, design, sigma2):
    q = design.n_coefficients
    a = np.zeros((q, q))
    b = np.zeros(q)
    x_per_seq = {}
    for k in range(1, design.K + 1):
        rows = dataset.rows_for_sequence(k)
        if rows.size == 0:
            continue
        x = design.design_matrix(k, d_full[rows])
        x_per_seq[k] = (rows, x)
        gid = design.coef_maps[k - 1]
        w = 1.0 / sigma2[k - 1]
        a[np.ix_(gid, gid)] += w * (x.T @ x)
        b[gid] += w * (x.T @ dataset.y[rows])
    return a, b, x_per_seq


def _report_rank_deficiency(design, a):
    eigvals, eigvecs = np.linalg.eigh(a)
    worst = np.argmax(np.abs(eigvecs[:, 0]))
    k, col = design.global_slots[worst]
    raise CollinearityError(
        f"pooled design is rank deficient (min eigenvalue {eigvals[0]:.3e}); "
        f"largest null-direction loading at sequence {k}, slot {col!r}"
    )


def draw_coefficients(dataset, d_full, design, sigma2, rng):
    """One Gaussian draw of the global coefficient vector given variances."""
    a, b, _ = _pooled_system(dataset, d_full, design, np.asarray(sigma2, dtype=float))
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        _report_rank_deficiency(design, a)
    mean = np.linalg.solve(a, b)
    z = rng.standard_normal(design.n_coefficients)
    return mean + np.linalg.solve(chol.T, z)


def draw_variances(dataset, d_full, design, theta, rng):
    """Scaled inverse chi-square draws of each sequence's residual variance.

    Degrees of freedom are n_k - J_k with the scale set by the residual
    mean square at the current coefficient draw.
    """
    sigma2 = np.empty(design.K)
    for k in range(1, design.K + 1):
        rows = dataset.rows_for_sequence(k)
        x = design.design_matrix(k, d_full[rows])
        nu = rows.size - x.shape[1]
        if nu <= 0:
            raise ValueError(
                f"sequence {k} has {rows.size} subjects but {x.shape[1]} coefficients"
            )
        resid = dataset.y[rows] - x @ theta[design.coef_maps[k - 1]]
        rss = float(resid @ resid)
        sigma2[k - 1] = rss / rng.chisquare(nu)
    return sigma2


def draw_outcome_params(dataset, d_full, design, sigma2_current, rng):
    """Gibbs block for the outcome models: coefficients, then variances."""
    theta = draw_coefficients(dataset, d_full, design, sigma2_current, rng)
    sigma2 = draw_variances(dataset, d_full, design, theta, rng)
    return OutcomeParams(design=design, theta=theta, sigma2=sigma2)


def predict_mean(params, k, d):
    """Sequence-k conditional mean outcome at compliance vector ``d``.

    ``d`` may be a full coordinate vector or a {coordinate: value}
    mapping covering at least the sequence's model columns.
    """
    design = params.design
    if isinstance(d, dict):
        full = np.full(design.m, np.nan)
        for name, v in d.items():
            full[design.coord_index[name]] = v
    else:
        full = np.asarray(d, dtype=float)
    needed = {j for col in design.column_indices[k - 1] for j in col}
    for j in needed:
        if np.isnan(full[j]):
            raise ValueError(
                f"sequence {k} model needs coordinate {design.coords[j]!r}"
            )
    x = design.design_matrix(k, np.nan_to_num(full, nan=0.0))
    return float(x[0] @ params.beta_for(k))


# --- logistic response model -----------------------------------------------

def _loglik_logistic(x, s, gamma):
    lp = x @ gamma
    # -log(1 + exp(-lp)) for s=1, -log(1 + exp(lp)) for s=0, stably
    sign = 2.0 * s - 1.0
    return -np.logaddexp(0.0, -sign * lp).sum()


def logistic_mh(x, s, init, scale, steps, rng):
    """Random-walk Metropolis over logistic coefficients under a flat prior.

    Returns (final coefficients, acceptance count).  Proposals are
    isotropic Gaussian with standard deviation ``scale``.
    """
    gamma = np.asarray(init, dtype=float).copy()
    ll = _loglik_logistic(x, s, gamma)
    accepted = 0
    for _ in range(steps):
        prop = gamma + scale * rng.standard_normal(gamma.size)
        ll_prop = _loglik_logistic(x, s, prop)
        if np.log(rng.random()) < ll_prop - ll:
            gamma, ll = prop, ll_prop
            accepted += 1
    return gamma, accepted


def response_design_matrix(variant, a1, d11, d12, arm=None):
    if variant == "a4":
        return np.column_stack([np.ones_like(d11), d11, d12, a1])
    if variant == "a5":
        own = d11 if arm == 1 else d12
        return np.column_stack([np.ones_like(own), own])
    raise ValueError(f"unknown response variant {variant!r}")


class ResponseSampler:
    """Persistent-state MH sampler for the response model inside the
    outer Gibbs loop.

    A long initialization run (thinned, flat prior) sets the starting
    point; each outer iteration then applies a short refresh run from the
    current state against the freshly imputed compliances.  The proposal
    scale adapts toward the target acceptance rate while ``adapting`` is
    True and is frozen afterwards.
    """

    def __init__(self, variant="a4", init_steps=10_000, init_thin=10,
                 refresh_steps=20, target_accept=0.3):
        self.variant = variant
        self.init_steps = init_steps
        self.init_thin = init_thin
        self.refresh_steps = refresh_steps
        self.target_accept = target_accept
        self.arms = ("all",) if variant == "a4" else (1, -1)
        p = 4 if variant == "a4" else 2
        self.gamma = {arm: np.zeros(p) for arm in self.arms}
        self.scale = {arm: 0.2 for arm in self.arms}
        self.adapting = True
        self.accept_count = 0
        self.step_count = 0
        self.separation_flagged = False

    def _matrices(self, dataset, d_full):
        design = dataset.design
        j11 = design.coord_index[design.response_columns[0]]
        j12 = design.coord_index[design.response_columns[1]]
        d11, d12 = d_full[:, j11], d_full[:, j12]
        out = {}
        for arm in self.arms:
            if self.variant == "a4":
                out[arm] = (
                    response_design_matrix("a4", dataset.a1.astype(float), d11, d12),
                    dataset.s.astype(float),
                )
            else:
                sel = dataset.a1 == arm
                out[arm] = (
                    response_design_matrix("a5", None, d11[sel], d12[sel], arm=arm),
                    dataset.s[sel].astype(float),
                )
        return out

    def _run(self, dataset, d_full, steps, rng):
        for arm, (x, s) in self._matrices(dataset, d_full).items():
            if s.min() == s.max():
                raise ValueError("both response statuses must be present")
            gamma, acc = logistic_mh(x, s, self.gamma[arm], self.scale[arm], steps, rng)
            self.gamma[arm] = gamma
            self.accept_count += acc
            self.step_count += steps
            if self.adapting:
                rate = acc / steps
                self.scale[arm] *= float(np.exp(0.5 * (rate - self.target_accept)))
            if np.max(np.abs(gamma)) > 50.0 and not self.separation_flagged:
                self.separation_flagged = True

    def initialize(self, dataset, d_full, rng):
        self._run(dataset, d_full, self.init_steps, rng)
        return self.current()

    def refresh(self, dataset, d_full, rng):
        self._run(dataset, d_full, self.refresh_steps, rng)
        return self.current()

    def current(self):
        return ResponseParams(self.variant, {k: v.copy() for k, v in self.gamma.items()})

    @property
    def acceptance_rate(self):
        return self.accept_count / self.step_count if self.step_count else float("nan")


def draw_response_params(s, a1, d11, d12, rng, variant="a4",
                         steps=10_000, thin=10, scale=0.2):
    """One posterior draw of the response coefficients from a fresh chain.

    Runs ``steps`` random-walk iterations keeping every ``thin``-th state
    and returns the last kept one.
    """
    s = np.asarray(s, dtype=float)
    a1 = np.asarray(a1, dtype=float)
    if s.min() == s.max():
        raise ValueError("both response statuses must be present")
    gamma = {}
    if variant == "a4":
        x = response_design_matrix("a4", a1, np.asarray(d11, float), np.asarray(d12, float))
        g, _ = logistic_mh(x, s, np.zeros(4), scale, steps, rng)
        gamma["all"] = g
    elif variant == "a5":
        for arm in (1, -1):
            sel = a1 == arm
            x = response_design_matrix("a5", None, np.asarray(d11, float)[sel],
                                       np.asarray(d12, float)[sel], arm=arm)
            g, _ = logistic_mh(x, s[sel], np.zeros(2), scale, steps, rng)
            gamma[arm] = g
    else:
        raise ValueError(f"unknown response variant {variant!r}")
    del thin  # kept states beyond the last are not returned
    return ResponseParams(variant, gamma)


def response_prob(params, a1, d11, d12):
    """P(S=1 | A1=a1, stage-1 compliances) under the fitted model."""
    if params.variant == "a4":
        g = params.gamma["all"]
        return float(expit(g[0] + g[1] * d11 + g[2] * d12 + g[3] * a1))
    g = params.gamma[int(a1)]
    own = d11 if a1 == 1 else d12
    return float(expit(g[0] + g[1] * own))
