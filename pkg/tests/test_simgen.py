import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import beta as sp_beta
from scipy.stats import spearmanr

from smartstrata.distributions import expit
from smartstrata.simgen import (
    Scenario,
    engage_scenario,
    exchangeable_corr,
    gen_copula_compliances,
    gen_engage_trial,
    gen_general_trial,
    gen_trial,
    general_scenario,
)


def test_independent_copula_correlation():
    sc = engage_scenario(rho=0.0, n=5000)
    d = gen_copula_compliances(sc, np.random.default_rng(0))
    corr = np.corrcoef(d.T)
    off = corr[~np.eye(3, dtype=bool)]
    assert np.abs(off).max() < 0.05


def test_beta_margin_means():
    sc = engage_scenario(rho=0.2, n=5000)
    d = gen_copula_compliances(sc, np.random.default_rng(1))
    # Beta(3,2) mean 0.6, Beta(2,1) mean 2/3, Beta(2,3) mean 0.4
    assert abs(d[:, 0].mean() - 0.6) < 0.02
    assert abs(d[:, 1].mean() - 2.0 / 3.0) < 0.02
    assert abs(d[:, 2].mean() - 0.4) < 0.02
    assert d.min() >= 0.0 and d.max() <= 1.0


def test_copula_spearman_identity():
    # normal-copula Spearman rho = 6 arcsin(rho/2)/pi, margin-free
    rho = 0.8
    target = 6.0 * np.arcsin(rho / 2.0) / np.pi
    sc = engage_scenario(rho=rho, n=5000)
    d = gen_copula_compliances(sc, np.random.default_rng(2))
    s01 = spearmanr(d[:, 0], d[:, 1]).statistic
    s02 = spearmanr(d[:, 0], d[:, 2]).statistic
    assert abs(s01 - target) < 0.05
    assert abs(s02 - target) < 0.05


def test_engage_response_model_value():
    # P(S=1 | A1=+1, D11=1) = expit(0) = 1/2
    assert expit(1.0 * 1.0 - 1.0) == pytest.approx(0.5)


def test_engage_trial_outcome_equations():
    sc = engage_scenario(rho=0.2, n=4000)
    ds, d_full = gen_engage_trial(sc, np.random.default_rng(3))
    # subjects on (A1=+1, S=1) are sequence 1 with Y = 0.7 + 0.6 d11 + eps
    rows = ds.rows_for_sequence(1)
    assert np.all((ds.a1[rows] == 1) & (ds.s[rows] == 1))
    resid = ds.y[rows] - (0.7 + 0.6 * d_full[rows, 0])
    assert abs(resid.mean()) < 0.01
    assert abs(resid.std() - 0.1) < 0.01
    # sequence 4 subjects carry observed d12, latent d11
    rows4 = ds.rows_for_sequence(4)
    assert np.all(np.isnan(ds.d_obs[rows4, 0]))
    assert not np.any(np.isnan(ds.d_obs[rows4, 1]))


def test_engage_masks_match_design():
    sc = engage_scenario(rho=0.5, n=500)
    ds, _ = gen_engage_trial(sc, np.random.default_rng(4))
    expected = ds.design.observed_masks[ds.seq - 1]
    np.testing.assert_array_equal(~np.isnan(ds.d_obs), expected)


def test_engage_empirical_response_rate_vs_quadrature():
    # P(S=1 | A1=+1) = E[expit(D11 - 1)], D11 ~ Beta(3,2)
    oracle = quad(lambda x: expit(x - 1.0) * sp_beta.pdf(x, 3, 2), 0, 1)[0]
    sc = engage_scenario(rho=0.2, n=5000)
    ds, _ = gen_engage_trial(sc, np.random.default_rng(5))
    plus = ds.a1 == 1
    assert abs(ds.s[plus].mean() - oracle) < 0.03


def test_general_trial_sequence8_equation():
    sc = general_scenario(rho=0.2, n=6000)
    ds, d_full = gen_general_trial(sc, np.random.default_rng(6))
    rows = ds.rows_for_sequence(8)
    assert np.all((ds.a1[rows] == -1) & (ds.s[rows] == 0) & (ds.a2[rows] == -1))
    coord = ds.design.coord_index
    pred = (0.4 + 0.5 * d_full[rows, coord["d12"]]
            + 0.9 * d_full[rows, coord["d21nr"]]
            + 0.7 * d_full[rows, coord["d22nr"]])
    resid = ds.y[rows] - pred
    assert abs(resid.mean()) < 0.02
    assert abs(resid.std() - 0.1) < 0.02


def test_general_trial_counts_partition():
    sc = general_scenario(rho=0.2, n=1234)
    ds, _ = gen_general_trial(sc, np.random.default_rng(7))
    counts = [len(ds.rows_for_sequence(k)) for k in range(1, 9)]
    assert sum(counts) == 1234
    assert all(c > 0 for c in counts)


def test_trial_draws_are_reproducible():
    sc = engage_scenario(rho=0.2, n=100)
    a, da = gen_trial(sc, np.random.default_rng(8))
    b, db = gen_trial(sc, np.random.default_rng(8))
    np.testing.assert_array_equal(da, db)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.seq, b.seq)


def test_design_mismatch_rejected():
    sc = engage_scenario()
    with pytest.raises(ValueError):
        gen_general_trial(sc, np.random.default_rng(0))
    with pytest.raises(ValueError):
        gen_engage_trial(general_scenario(), np.random.default_rng(0))


def test_scenario_validation():
    sc = engage_scenario()
    bad_corr = exchangeable_corr(3, 0.2)
    bad_corr[0, 0] = 2.0
    with pytest.raises(ValueError):
        Scenario(design=sc.design, n=10, margins=sc.margins, corr=bad_corr,
                 response_truth=sc.response_truth, outcome_truth=sc.outcome_truth)
    with pytest.raises(ValueError):
        Scenario(design=sc.design, n=10, margins=((1, 1), (0, 1), (1, 1)),
                 corr=exchangeable_corr(3, 0.2),
                 response_truth=sc.response_truth, outcome_truth=sc.outcome_truth)


def test_truth_manifest_round_trippable():
    import json

    sc = engage_scenario(rho=0.5, n=50, interaction=True)
    manifest = json.loads(json.dumps(sc.truth_manifest()))
    assert manifest["outcome"]["2"]["d11*d22"] == 2.0
    assert manifest["margins"]["d22"] == [2.0, 3.0]
