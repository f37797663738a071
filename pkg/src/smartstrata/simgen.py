"""Synthetic SMART data: Gaussian-copula potential compliances with Beta
margins, logistic stage-1 response, linear potential outcomes, balanced
sequential randomization.

Every generator is deterministic given (scenario, rng) and returns the
masked dataset together with the full ground truth, so downstream tests
can compare estimates against the values that actually generated the
data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr
from scipy.stats import beta as beta_dist

from .data import Dataset
from .design import build_engage_design, build_general_design
from .distributions import expit

__all__ = [
    "Scenario",
    "engage_scenario",
    "general_scenario",
    "gen_copula_compliances",
    "gen_trial",
    "gen_engage_trial",
    "gen_general_trial",
]


@dataclass(frozen=True)
class Scenario:
    """Complete generative specification for one synthetic trial.

    ``outcome_truth`` maps sequence id -> {column name: coefficient} with
    an ``"intercept"`` entry; ``response_truth`` maps the stage-1 arm to
    (own-branch compliance coordinate, slope, intercept) of the logistic
    response model.
    """

    design: object
    n: int
    margins: tuple[tuple[float, float], ...]
    corr: np.ndarray
    response_truth: dict
    outcome_truth: dict
    noise_sd: float = 0.1

    def __post_init__(self):
        corr = np.asarray(self.corr, dtype=float)
        if corr.shape != (self.design.m, self.design.m):
            raise ValueError("correlation matrix does not match coordinate count")
        if not np.allclose(np.diag(corr), 1.0):
            raise ValueError("correlation matrix must have unit diagonal")
        np.linalg.cholesky(corr)  # fail fast if not PD
        object.__setattr__(self, "corr", corr)
        if len(self.margins) != self.design.m:
            raise ValueError("one Beta margin pair required per coordinate")
        for a, b in self.margins:
            if a <= 0 or b <= 0:
                raise ValueError("Beta margin parameters must be positive")

    def truth_manifest(self):
        """JSON-ready record of every generative quantity."""
        return {
            "design": self.design.name,
            "n": self.n,
            "margins": {c: list(m) for c, m in zip(self.design.coords, self.margins)},
            "correlation": self.corr.tolist(),
            "response": {f"{arm:+d}": list(v) for arm, v in self.response_truth.items()},
            "outcome": {str(k): dict(v) for k, v in self.outcome_truth.items()},
            "noise_sd": self.noise_sd,
        }


def exchangeable_corr(m, rho):
    r = np.full((m, m), float(rho))
    np.fill_diagonal(r, 1.0)
    return r


def engage_scenario(rho=0.2, n=250, interaction=False):
    """The ENGAGE-style synthetic study (main effects or interaction variant)."""
    design = build_engage_design(interaction=interaction)
    outcome = {
        1: {"intercept": 0.7, "d11": 0.6},
        2: {"intercept": 0.2, "d11": 0.7, "d22": 0.9},
        3: {"intercept": 0.2, "d11": 0.6, "d22": 0.9},
        4: {"intercept": 0.7, "d11": 0.6, "d12": 0.6},
        5: {"intercept": 0.3, "d12": 0.6, "d22": 0.7},
        6: {"intercept": 0.3, "d12": 0.6, "d22": 0.7},
    }
    if interaction:
        outcome[2]["d11*d22"] = 2.0
        outcome[3]["d11*d22"] = 2.0
        outcome[5]["d12*d22"] = 1.5
        outcome[6]["d12*d22"] = 1.5
    return Scenario(
        design=design,
        n=n,
        margins=((3.0, 2.0), (2.0, 1.0), (2.0, 3.0)),
        corr=exchangeable_corr(3, rho),
        response_truth={+1: ("d11", 1.0, -1.0), -1: ("d12", 1.0, -1.5)},
        outcome_truth=outcome,
    )


def general_scenario(rho=0.2, n=250):
    """The general-SMART synthetic study.

    Stage-1 margins are Beta(3,2); the remaining stage-2 coordinates use
    Beta(2,3) for the responder add-on, Beta(2,1) for the non-responder
    switch option and Beta(3,2) for the non-responder add-on.
    """
    design = build_general_design()
    outcome = {
        1: {"intercept": 1.0, "d11": 0.6},
        2: {"intercept": 0.4, "d11": 0.5, "d22r": 0.8},
        3: {"intercept": 0.2, "d11": 0.8, "d21nr": 0.9},
        4: {"intercept": 0.2, "d11": 0.8, "d21nr": 0.9, "d22nr": 0.7},
        5: {"intercept": 0.7, "d12": 0.6},
        6: {"intercept": 0.6, "d12": 0.2, "d22r": 0.4},
        7: {"intercept": 0.4, "d12": 0.5, "d21nr": 0.9},
        8: {"intercept": 0.4, "d12": 0.5, "d21nr": 0.9, "d22nr": 0.7},
    }
    return Scenario(
        design=design,
        n=n,
        margins=((3.0, 2.0), (3.0, 2.0), (2.0, 3.0), (2.0, 1.0), (3.0, 2.0)),
        corr=exchangeable_corr(5, rho),
        response_truth={+1: ("d11", 1.0, -1.0), -1: ("d12", 1.0, -1.5)},
        outcome_truth=outcome,
    )


def gen_copula_compliances(scenario, rng):
    """(n, m) potential compliances: Gaussian copula with Beta margins."""
    chol = np.linalg.cholesky(scenario.corr)
    z = rng.standard_normal((scenario.n, scenario.design.m)) @ chol.T
    u = ndtr(z)
    d = np.empty_like(u)
    for j, (a, b) in enumerate(scenario.margins):
        d[:, j] = beta_dist.ppf(u[:, j], a, b)
    return d


def _potential_outcome(scenario, k, d):
    coef = scenario.outcome_truth[k]
    coord = scenario.design.coord_index
    out = np.full(d.shape[0], coef["intercept"], dtype=float)
    for name, b in coef.items():
        if name == "intercept":
            continue
        parts = name.split("*")
        v = d[:, coord[parts[0]]].copy()
        for p in parts[1:]:
            v *= d[:, coord[p]]
        out += b * v
    return out


def gen_trial(scenario, rng):
    """Simulate one trial: returns (dataset, full compliance matrix).

    Draw order is fixed (compliances, stage-1 arms, response, stage-2
    arms, outcome noise) so results are bit-reproducible per seed.
    """
    design = scenario.design
    n = scenario.n
    d = gen_copula_compliances(scenario, rng)
    a1 = rng.integers(0, 2, size=n) * 2 - 1
    p_resp = np.empty(n)
    for arm, (coordname, slope, intercept) in scenario.response_truth.items():
        sel = a1 == arm
        p_resp[sel] = expit(slope * d[sel, design.coord_index[coordname]] + intercept)
    s = (rng.random(n) < p_resp).astype(int)

    rerand = np.zeros(n, dtype=bool)
    for seq in design.sequences:
        if seq.a2 is not None:
            rerand |= (a1 == seq.a1) & (s == int(seq.responder))
    a2 = np.where(rerand, rng.integers(0, 2, size=n) * 2 - 1, 0)

    seq_ids = np.array(
        [design.sequence_for(a1[i], s[i], None if a2[i] == 0 else a2[i]) for i in range(n)],
        dtype=int,
    )
    y = np.empty(n)
    noise = rng.normal(0.0, scenario.noise_sd, size=n)
    for k in range(1, design.K + 1):
        rows = seq_ids == k
        if rows.any():
            y[rows] = _potential_outcome(scenario, k, d[rows]) + noise[rows]

    d_obs = d.copy()
    d_obs[~design.observed_masks[seq_ids - 1]] = np.nan
    dataset = Dataset(
        design=design,
        ids=np.array([str(i + 1) for i in range(n)], dtype=object),
        a1=a1,
        s=s,
        a2=a2,
        d_obs=d_obs,
        y=y,
        seq=seq_ids,
    )
    return dataset, d


def gen_engage_trial(scenario, rng):
    if scenario.design.name != "engage":
        raise ValueError("scenario does not use the ENGAGE design")
    return gen_trial(scenario, rng)


def gen_general_trial(scenario, rng):
    if scenario.design.name != "general":
        raise ValueError("scenario does not use the general design")
    return gen_trial(scenario, rng)
