import json
import os

import numpy as np
import pytest

from smartstrata.cli import main
from smartstrata.data import SchemaError, ingest, write_dataset
from smartstrata.design import build_engage_design
from smartstrata.simgen import engage_scenario, gen_engage_trial


@pytest.fixture(scope="module")
def engage():
    return build_engage_design()


@pytest.fixture()
def sim_csv(tmp_path, engage):
    sc = engage_scenario(rho=0.2, n=60)
    ds, _ = gen_engage_trial(sc, np.random.default_rng(31))
    path = tmp_path / "data.csv"
    write_dataset(ds, path)
    return path, ds


def test_ingest_round_trip(sim_csv, engage):
    path, original = sim_csv
    loaded = ingest(path, engage)
    np.testing.assert_array_equal(loaded.a1, original.a1)
    np.testing.assert_array_equal(loaded.s, original.s)
    np.testing.assert_array_equal(loaded.a2, original.a2)
    np.testing.assert_array_equal(loaded.seq, original.seq)
    # exact float round trip via shortest repr
    np.testing.assert_array_equal(loaded.y, original.y)
    obs = ~original.missing_mask()
    np.testing.assert_array_equal(loaded.d_obs[obs], original.d_obs[obs])


def test_ingest_rejects_responder_with_stage2(tmp_path, engage):
    path = tmp_path / "bad.csv"
    path.write_text(
        "id,a1,s,a2,d11,d12,d22,y\n"
        "1,1,1,1,0.5,NA,NA,1.0\n"
    )
    with pytest.raises(SchemaError, match="line 2"):
        ingest(path, engage)


def test_ingest_rejects_wrong_mask(tmp_path, engage):
    path = tmp_path / "bad2.csv"
    path.write_text(
        "id,a1,s,a2,d11,d12,d22,y\n"
        "1,1,1,NA,0.5,0.4,NA,1.0\n"  # d12 must be latent for sequence 1
    )
    with pytest.raises(SchemaError, match="pattern"):
        ingest(path, engage)


def test_ingest_rejects_out_of_range_compliance(tmp_path, engage):
    path = tmp_path / "bad3.csv"
    path.write_text(
        "id,a1,s,a2,d11,d12,d22,y\n"
        "1,1,1,NA,1.5,NA,NA,1.0\n"
    )
    with pytest.raises(SchemaError, match="0,1|\\[0,1\\]"):
        ingest(path, engage)


def test_ingest_rejects_header_mismatch(tmp_path, engage):
    path = tmp_path / "bad4.csv"
    path.write_text("id,a1,s,d11,d12,d22,y\n")
    with pytest.raises(SchemaError, match="header"):
        ingest(path, engage)


def test_log_transform(tmp_path, engage):
    path = tmp_path / "t.csv"
    path.write_text(
        "id,a1,s,a2,d11,d12,d22,y\n"
        "1,1,1,NA,0.5,NA,NA,0.0\n"
    )
    ds = ingest(path, engage, y_transform="log", y_offset=0.5)
    assert ds.y[0] == pytest.approx(np.log(0.5))


def test_cli_simulate_then_ingest_round_trip(tmp_path):
    out = tmp_path / "sim"
    rc = main(["simulate", "--design", "engage", "--rho", "0.2", "--n", "40",
               "--seed", "5", "--out", str(out)])
    assert rc == 0
    assert (out / "dataset.csv").exists()
    truth = json.loads((out / "truth.json").read_text())
    assert truth["outcome"]["1"]["d11"] == 0.6
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 5
    # the written file ingests into the same in-memory dataset
    sc = engage_scenario(rho=0.2, n=40)
    ds, _ = gen_engage_trial(sc, np.random.default_rng(5))
    loaded = ingest(out / "dataset.csv", build_engage_design())
    np.testing.assert_array_equal(loaded.y, ds.y)
    obs = ~ds.missing_mask()
    np.testing.assert_array_equal(loaded.d_obs[obs], ds.d_obs[obs])


@pytest.fixture(scope="module")
def fitted_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    sim = base / "sim"
    assert main(["simulate", "--design", "engage", "--n", "80", "--seed", "6",
                 "--out", str(sim)]) == 0
    cfg = base / "cfg.ini"
    cfg.write_text(
        "[sampler]\nH = 6\niterations = 120\nburn_in = 60\nthin = 3\nmc_budget = 256\n"
    )
    fit = base / "fit"
    assert main(["fit", "--data", str(sim / "dataset.csv"), "--design", "engage",
                 "--config", str(cfg), "--seed", "7", "--out", str(fit)]) == 0
    return base, sim, fit


def test_cli_fit_outputs(fitted_dir):
    _, _, fit = fitted_dir
    for name in ("draws.csv", "imputed.csv", "diagnostics.csv", "manifest.json"):
        assert (fit / name).exists()
    manifest = json.loads((fit / "manifest.json").read_text())
    assert manifest["config"]["iterations"] == 120
    assert manifest["config"]["seed"] == 7


def test_cli_fit_deterministic_bytes(fitted_dir, tmp_path):
    base, sim, fit = fitted_dir
    cfg = base / "cfg.ini"
    fit2 = tmp_path / "fit2"
    assert main(["fit", "--data", str(sim / "dataset.csv"), "--design", "engage",
                 "--config", str(cfg), "--seed", "7", "--out", str(fit2)]) == 0
    assert (fit / "draws.csv").read_bytes() == (fit2 / "draws.csv").read_bytes()
    assert (fit / "imputed.csv").read_bytes() == (fit2 / "imputed.csv").read_bytes()


def test_cli_estimate_outputs(fitted_dir, tmp_path):
    _, _, fit = fitted_dir
    out = tmp_path / "est"
    rc = main(["estimate", "--draws", str(fit), "--out", str(out), "--bootstrap", "50"])
    assert rc == 0
    for name in ("pce_by_class.csv", "mcb.csv", "waic.csv", "itt.csv", "pce_grid.csv",
                 "manifest.json"):
        assert (out / name).exists()
    header = (out / "pce_by_class.csv").read_text().splitlines()[0]
    assert header == "class,edtr,mean,sd,lower,upper"


def test_cli_estimate_single_draw_degenerate(tmp_path):
    # a single kept draw gives zero-width intervals in the PCE table
    sim = tmp_path / "sim"
    assert main(["simulate", "--design", "engage", "--n", "80", "--seed", "8",
                 "--out", str(sim)]) == 0
    cfg = tmp_path / "cfg.ini"
    cfg.write_text(
        "[sampler]\nH = 6\niterations = 62\nburn_in = 60\nthin = 2\nmc_budget = 256\n"
    )
    fit = tmp_path / "fit"
    assert main(["fit", "--data", str(sim / "dataset.csv"), "--config", str(cfg),
                 "--seed", "9", "--out", str(fit)]) == 0
    import csv

    with open(fit / "draws.csv") as fh:
        assert sum(1 for _ in csv.reader(fh)) == 2  # header + one draw
    out = tmp_path / "est"
    rc = main(["estimate", "--draws", str(fit), "--out", str(out), "--bootstrap", "20"])
    assert rc == 0
    with open(out / "pce_by_class.csv") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        assert float(row["sd"]) == 0.0
        assert float(row["lower"]) == float(row["upper"]) == float(row["mean"])


def test_cli_validation_exit_code(tmp_path):
    rc = main(["fit", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_cli_bad_schema_exit_code(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,a1\n1,1\n")
    rc = main(["fit", "--data", str(bad), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_cli_replicate_small(tmp_path):
    os.environ["SMARTSTRATA_WORKERS"] = "1"
    try:
        cfg = tmp_path / "cfg.ini"
        cfg.write_text(
            "[sampler]\nH = 5\niterations = 80\nburn_in = 40\nthin = 4\nmc_budget = 256\n"
        )
        out = tmp_path / "rep"
        rc = main(["replicate", "--design", "engage", "--rho", "0.2", "--n", "100",
                   "--replicates", "3", "--seed", "13", "--config", str(cfg),
                   "--out", str(out)])
        assert rc == 0
        lines = (out / "bias_se.csv").read_text().splitlines()
        assert lines[0] == "parameter,seq1,seq2,seq3,seq4,seq5,seq6"
        assert len(lines) == 1 + 4  # intercept, d11, d22, d12
        long_lines = (out / "bias_se_long.csv").read_text().splitlines()
        assert len(long_lines) == 1 + 11  # one row per free coefficient
    finally:
        os.environ.pop("SMARTSTRATA_WORKERS", None)
