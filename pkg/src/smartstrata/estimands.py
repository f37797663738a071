"""Downstream estimands: regime means by compliance stratum, model
comparison, and multiple comparisons with the best.

A regime's mean outcome at a compliance vector mixes its responder and
non-responder sequence means with the fitted stage-1 response
probability:

    theta = theta_R * lambda + theta_NR * (1 - lambda).

Per-draw evaluation of that quantity feeds the stratum summaries, the
best-regime sets, and the plot grids.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .distributions import expit

__all__ = [
    "pce_draw",
    "pce_matrix",
    "pce_summary",
    "BestSet",
    "mcb_sets",
    "waic",
    "itt_summary",
    "write_pce_table",
    "write_mcb_table",
    "write_waic_table",
    "write_itt_table",
    "pce_grid",
    "write_pce_grid",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


def _regime_point(design, l, d):
    """(x_R, x_NR, a1, k_R, k_NR) model rows for EDTR l at point d."""
    d = np.asarray(d, dtype=float)
    k_r, k_nr = design.edtr_map[l - 1]
    needed = sorted(
        {j for k in (k_r, k_nr) for col in design.column_indices[k - 1] for j in col}
    )
    if needed and np.isnan(d[needed]).any():
        raise ValueError(f"EDTR {l} needs more coordinates than supplied")
    x_r = design.design_matrix(k_r, d[None, :])[0]
    x_nr = design.design_matrix(k_nr, d[None, :])[0]
    a1 = design.sequences[k_r - 1].a1
    return x_r, x_nr, a1, k_r, k_nr


def _lambda_draws(draws, design, a1, d):
    gamma = draws.gamma
    j11 = design.coord_index[design.response_columns[0]]
    j12 = design.coord_index[design.response_columns[1]]
    if "all" in gamma:
        g = gamma["all"]
        lp = g[:, 0] + g[:, 1] * d[j11] + g[:, 2] * d[j12] + g[:, 3] * a1
    else:
        g = gamma[int(a1)]
        own = d[j11] if a1 == 1 else d[j12]
        lp = g[:, 0] + g[:, 1] * own
    return expit(lp)


def pce_draw(draws, i, design, l, d):
    """Draw i of the EDTR-l mean outcome at compliance vector d."""
    x_r, x_nr, a1, k_r, k_nr = _regime_point(design, l, np.asarray(d, dtype=float))
    params = draws.outcome_params_at(i)
    lam = float(_lambda_draws(draws, design, a1, np.asarray(d, dtype=float))[i])
    theta_r = float(x_r @ params.beta_for(k_r))
    theta_nr = float(x_nr @ params.beta_for(k_nr))
    return theta_r * lam + theta_nr * (1.0 - lam)


def pce_matrix(draws, design, d):
    """(n_draws, L) regime means at one compliance vector, all draws at once."""
    d = np.asarray(d, dtype=float)
    out = np.empty((draws.n_draws, design.L))
    for l in range(1, design.L + 1):
        x_r, x_nr, a1, k_r, k_nr = _regime_point(design, l, d)
        beta_r = draws.theta[:, design.coef_maps[k_r - 1]]
        beta_nr = draws.theta[:, design.coef_maps[k_nr - 1]]
        lam = _lambda_draws(draws, design, a1, d)
        out[:, l - 1] = (beta_r @ x_r) * lam + (beta_nr @ x_nr) * (1.0 - lam)
    return out


def pce_summary(draws, design, l, cls, level=0.95):
    """Posterior mean, sd and equal-tailed interval of the EDTR-l outcome
    at the class representative point."""
    if draws.n_draws < 2:
        raise ValueError("need at least 2 draws")
    vals = pce_matrix(draws, design, cls.representative)[:, l - 1]
    lo, hi = np.quantile(vals, [(1 - level) / 2, 1 - (1 - level) / 2])
    return {
        "mean": float(vals.mean()),
        "sd": float(vals.std(ddof=1)),
        "lower": float(lo),
        "upper": float(hi),
    }


@dataclass(frozen=True)
class BestSet:
    """Multiple-comparisons-with-the-best result for one stratum."""

    best: int
    upper_limits: dict
    members: tuple

    def __contains__(self, l):
        return l in self.members


def mcb_sets(pce_draws, alpha=0.05):
    """Set of regimes statistically indistinguishable from the best.

    ``pce_draws`` is (n_draws, L).  The best regime is the argmax of the
    posterior means (ties to the lowest index).  For every other regime
    the upper limit of a one-sided Bonferroni-adjusted credible interval
    for its shortfall against the per-draw maximum decides membership:
    U_l >= 0 keeps regime l.
    """
    pce_draws = np.asarray(pce_draws, dtype=float)
    if pce_draws.ndim != 2 or pce_draws.shape[1] < 2:
        raise ValueError("need a (draws, L>=2) matrix")
    if pce_draws.shape[0] < 2:
        raise ValueError("need at least 2 draws")
    n_l = pce_draws.shape[1]
    best = int(np.argmax(pce_draws.mean(axis=0))) + 1
    diffs = pce_draws - pce_draws.max(axis=1, keepdims=True)
    q = 1.0 - alpha / (n_l - 1)
    upper = {}
    members = [best]
    for l in range(1, n_l + 1):
        if l == best:
            continue
        upper[l] = float(np.quantile(diffs[:, l - 1], q))
        if upper[l] >= 0.0:
            members.append(l)
    return BestSet(best=best, upper_limits=upper, members=tuple(sorted(members)))


def waic(draws, dataset, k):
    """Deviance-scale WAIC of the sequence-k outcome model.

    Imputed compliances count as parameters: each kept draw supplies its
    own completed design row.  Raises if some subject's predictive
    density underflows to zero.
    """
    if draws.n_draws < 2:
        raise ValueError("need at least 2 draws")
    design = draws.design
    rows = dataset.rows_for_sequence(k)
    if rows.size == 0:
        raise ValueError(f"sequence {k} has no subjects")
    y = dataset.y[rows]
    gid = design.coef_maps[k - 1]
    n_draws = draws.n_draws
    loglik = np.empty((n_draws, rows.size))
    for i in range(n_draws):
        x = design.design_matrix(k, draws.d_draws[i, rows])
        mu = x @ draws.theta[i, gid]
        s2 = draws.sigma2[i, k - 1]
        loglik[i] = -0.5 * (_LOG_2PI + np.log(s2) + (y - mu) ** 2 / s2)
    mx = loglik.max(axis=0)
    mean_pred = np.exp(mx) * np.exp(loglik - mx).mean(axis=0)
    if np.any(mean_pred <= 0.0) or not np.all(np.isfinite(mx)):
        bad = int(rows[np.argmin(mean_pred)])
        raise FloatingPointError(
            f"zero predictive density for subject {dataset.ids[bad]}"
        )
    lppd = float(np.log(mean_pred).sum())
    penalty = float(loglik.var(axis=0, ddof=1).sum())
    return -2.0 * lppd + 2.0 * penalty


def _regime_weights(dataset, design, l):
    """Consistency indicator and inverse-randomization weights for EDTR l."""
    k_r, k_nr = design.edtr_map[l - 1]
    consistent = (dataset.seq == k_r) | (dataset.seq == k_nr)
    rerandomized = np.array(
        [design.sequences[s - 1].a2 is not None for s in dataset.seq]
    )
    weights = np.where(rerandomized, 4.0, 2.0)
    return consistent, weights


def itt_summary(dataset, design, n_boot=1000, rng=None, level=0.95):
    """Per-regime weighted empirical mean outcomes with bootstrap intervals.

    Subjects consistent with a regime contribute with weight equal to the
    inverse probability of their realized randomization path (balanced
    arms); responders shared by two regimes count toward both.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    out = {}
    for l in range(1, design.L + 1):
        consistent, weights = _regime_weights(dataset, design, l)
        if not consistent.any():
            raise ValueError(f"no subjects consistent with EDTR {l}")
        w = weights[consistent]
        y = dataset.y[consistent]
        est = float(np.sum(w * y) / np.sum(w))
        idx_all = np.nonzero(consistent)[0]
        boots = np.empty(n_boot)
        n = dataset.n
        for b in range(n_boot):
            take = rng.integers(0, n, size=n)
            mask = np.isin(take, idx_all)
            sel = take[mask]
            if sel.size == 0:
                boots[b] = est
                continue
            wb = weights[sel]
            boots[b] = np.sum(wb * dataset.y[sel]) / np.sum(wb)
        lo, hi = np.quantile(boots, [(1 - level) / 2, 1 - (1 - level) / 2])
        out[l] = {"mean": est, "lower": float(lo), "upper": float(hi),
                  "n_consistent": int(consistent.sum())}
    return out


# --- tabular emission -------------------------------------------------------

def _writer(path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def write_pce_table(draws, design, classes, path, level=0.95):
    fh, w = _writer(path)
    with fh:
        w.writerow(["class", "edtr", "mean", "sd", "lower", "upper"])
        for cls in classes:
            for l in range(1, design.L + 1):
                s = pce_summary(draws, design, l, cls, level=level)
                w.writerow([cls.name, l] + [repr(s[f]) for f in ("mean", "sd", "lower", "upper")])


def write_mcb_table(draws, design, classes, path, alpha=0.05):
    """Fig-5-style plot data: upper limits and membership per class."""
    fh, w = _writer(path)
    with fh:
        w.writerow(["class", "edtr", "upper_limit", "is_best", "in_best_set"])
        for cls in classes:
            mat = pce_matrix(draws, design, cls.representative)
            bs = mcb_sets(mat, alpha=alpha)
            for l in range(1, design.L + 1):
                u = bs.upper_limits.get(l, 0.0)
                w.writerow([cls.name, l, repr(float(u)), int(l == bs.best), int(l in bs)])


def write_waic_table(draws, dataset, path):
    fh, w = _writer(path)
    with fh:
        w.writerow(["sequence", "waic"])
        for k in range(1, draws.design.K + 1):
            w.writerow([k, repr(waic(draws, dataset, k))])


def write_itt_table(dataset, design, path, n_boot=1000, rng=None):
    fh, w = _writer(path)
    with fh:
        w.writerow(["edtr", "mean", "lower", "upper", "n_consistent"])
        for l, s in itt_summary(dataset, design, n_boot=n_boot, rng=rng).items():
            w.writerow([l, repr(s["mean"]), repr(s["lower"]), repr(s["upper"]), s["n_consistent"]])


def pce_grid(draws, design, steps=None, max_draws=200):
    """Posterior-mean regime outcomes over a factorial compliance grid.

    Returns (grid, means) with grid (G, m) and means (G, L).  Draws are
    thinned to at most ``max_draws`` for the grid average.
    """
    if steps is None:
        steps = 11 if design.m <= 3 else 5
    axes = [np.linspace(0.0, 1.0, steps)] * design.m
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.column_stack([g.ravel() for g in mesh])
    take = np.unique(np.linspace(0, draws.n_draws - 1, min(max_draws, draws.n_draws)).astype(int))
    j11 = design.coord_index[design.response_columns[0]]
    j12 = design.coord_index[design.response_columns[1]]
    means = np.zeros((grid.shape[0], design.L))
    for l in range(1, design.L + 1):
        k_r, k_nr = design.edtr_map[l - 1]
        a1 = design.sequences[k_r - 1].a1
        x_r = design.design_matrix(k_r, grid)
        x_nr = design.design_matrix(k_nr, grid)
        beta_r = draws.theta[np.ix_(take, design.coef_maps[k_r - 1])]
        beta_nr = draws.theta[np.ix_(take, design.coef_maps[k_nr - 1])]
        if "all" in draws.gamma:
            g = draws.gamma["all"][take]
            lp = g[:, :1] + np.outer(g[:, 1], grid[:, j11]) \
                + np.outer(g[:, 2], grid[:, j12]) + a1 * g[:, 3:4]
        else:
            g = draws.gamma[int(a1)][take]
            own = grid[:, j11] if a1 == 1 else grid[:, j12]
            lp = g[:, :1] + np.outer(g[:, 1], own)
        lam = expit(lp)  # (draws, G)
        theta_r = beta_r @ x_r.T
        theta_nr = beta_nr @ x_nr.T
        means[:, l - 1] = (theta_r * lam + theta_nr * (1.0 - lam)).mean(axis=0)
    return grid, means


def write_pce_grid(draws, design, path, steps=None, max_draws=200):
    """Fig-6-style plot data: posterior-mean regime outcome over a grid."""
    grid, means = pce_grid(draws, design, steps=steps, max_draws=max_draws)
    fh, w = _writer(path)
    with fh:
        w.writerow([*design.coords, *[f"pce_edtr{l}" for l in range(1, design.L + 1)]])
        for row, vals in zip(grid, means):
            w.writerow([repr(float(v)) for v in row] + [repr(float(v)) for v in vals])
