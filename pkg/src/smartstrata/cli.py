"""Command-line surface: simulate, fit, estimate, replicate.

Every command writes a ``manifest.json`` into its output directory with
enough information (arguments, seeds, config, design text) to re-run it
exactly.  Exit codes: 0 success, 2 validation error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import estimands
from .data import SchemaError, ingest, write_dataset
from .design import (
    build_engage_design,
    build_general_design,
    design_from_config,
    design_to_config,
    parse_class_spec,
    quartile_classes,
)
from .gibbs import PosteriorDraws, SamplerConfig, SamplerError, diagnostics, run_chain, write_diagnostics
from .outcomes import CollinearityError
from .simgen import engage_scenario, gen_trial, general_scenario

WORKERS_ENV = "SMARTSTRATA_WORKERS"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _worker_count():
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


def _load_design(args, interaction=False):
    if args.design == "engage":
        return build_engage_design(interaction=interaction)
    if args.design == "general":
        if interaction:
            raise ValueError("the general design has no interaction variant")
        return build_general_design()
    if args.design == "file":
        if not args.design_file:
            raise ValueError("--design file requires --design-file PATH")
        with open(args.design_file, encoding="utf-8") as fh:
            return design_from_config(fh.read())
    raise ValueError(f"unknown design {args.design!r}")


def _load_sampler_config(args):
    mapping = {}
    if getattr(args, "config", None):
        cp = configparser.ConfigParser()
        with open(args.config, encoding="utf-8") as fh:
            cp.read_file(fh)
        if cp.has_section("sampler"):
            mapping.update(dict(cp["sampler"]))
    if getattr(args, "seed", None) is not None:
        mapping["seed"] = args.seed
    if getattr(args, "interaction", False):
        mapping["interaction"] = True
    if getattr(args, "response_variant", None):
        mapping["response_variant"] = args.response_variant
    return SamplerConfig.from_mapping(mapping)


def _write_manifest(out_dir, payload):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _scenario(args, interaction):
    if args.design == "engage":
        return engage_scenario(rho=args.rho, n=args.n, interaction=interaction)
    if args.design == "general":
        if interaction:
            raise ValueError("the general design has no interaction variant")
        return general_scenario(rho=args.rho, n=args.n)
    raise ValueError("simulation requires --design engage or general")


def cmd_simulate(args):
    scenario = _scenario(args, args.interaction)
    rng = np.random.default_rng(args.seed)
    dataset, _ = gen_trial(scenario, rng)
    os.makedirs(args.out, exist_ok=True)
    write_dataset(dataset, os.path.join(args.out, "dataset.csv"))
    with open(os.path.join(args.out, "truth.json"), "w", encoding="utf-8") as fh:
        json.dump(scenario.truth_manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(args.out, {
        "command": "simulate",
        "design": args.design,
        "rho": args.rho,
        "n": args.n,
        "interaction": args.interaction,
        "seed": args.seed,
    })
    return EXIT_OK


def cmd_fit(args):
    config = _load_sampler_config(args)
    design = _load_design(args, interaction=config.interaction)
    dataset = ingest(args.data, design, y_transform=args.y_transform, y_offset=args.y_offset)
    draws = run_chain(dataset, design, config)
    os.makedirs(args.out, exist_ok=True)
    draws.save(args.out)
    if draws.n_draws >= 2:
        write_diagnostics(diagnostics(draws), os.path.join(args.out, "diagnostics.csv"))
    else:
        with open(os.path.join(args.out, "diagnostics.csv"), "w", encoding="utf-8") as fh:
            fh.write("name,mean,sd\n")
    _write_manifest(args.out, {
        "command": "fit",
        "data": os.path.abspath(args.data),
        "design": args.design,
        "design_text": design_to_config(design),
        "config": config.to_mapping(),
        "y_transform": args.y_transform,
        "y_offset": args.y_offset,
    })
    return EXIT_OK


def _tile_single_draw(draws):
    """Duplicate a lone kept draw so the summaries degenerate cleanly
    (zero-width intervals, zero variance penalties)."""
    reps = {}
    for name in ("theta", "sigma2", "alpha", "w", "etas", "Sigmas", "log_c",
                 "d_draws", "kept_iterations"):
        arr = getattr(draws, name)
        reps[name] = np.repeat(arr, 2, axis=0)
    reps["gamma"] = {arm: np.repeat(g, 2, axis=0) for arm, g in draws.gamma.items()}
    return dataclasses.replace(draws, **reps)


def cmd_estimate(args):
    with open(os.path.join(args.draws, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    design = design_from_config(manifest["design_text"])
    config = SamplerConfig.from_mapping(manifest["config"])
    data_path = args.data or manifest["data"]
    dataset = ingest(data_path, design, y_transform=manifest.get("y_transform"),
                     y_offset=manifest.get("y_offset", 0.5))
    draws = PosteriorDraws.load(args.draws, design, dataset, config)
    if draws.n_draws == 1:
        draws = _tile_single_draw(draws)
    classes = (parse_class_spec(args.classes, design.m) if args.classes
               else quartile_classes(design.m))
    os.makedirs(args.out, exist_ok=True)
    estimands.write_pce_table(draws, design, classes, os.path.join(args.out, "pce_by_class.csv"))
    estimands.write_mcb_table(draws, design, classes, os.path.join(args.out, "mcb.csv"),
                              alpha=args.alpha)
    estimands.write_waic_table(draws, dataset, os.path.join(args.out, "waic.csv"))
    estimands.write_itt_table(dataset, design, os.path.join(args.out, "itt.csv"),
                              n_boot=args.bootstrap, rng=np.random.default_rng(config.seed))
    estimands.write_pce_grid(draws, design, os.path.join(args.out, "pce_grid.csv"))
    _write_manifest(args.out, {
        "command": "estimate",
        "draws": os.path.abspath(args.draws),
        "data": os.path.abspath(data_path),
        "alpha": args.alpha,
        "classes": args.classes,
        "bootstrap": args.bootstrap,
    })
    return EXIT_OK


def _replicate_task(payload):
    """One replicate: simulate with the derived seed, fit, return posterior means."""
    (design_name, rho, n, interaction, data_seed, fit_seed, config_map) = payload
    if design_name == "engage":
        scenario = engage_scenario(rho=rho, n=n, interaction=interaction)
    else:
        scenario = general_scenario(rho=rho, n=n)
    dataset, _ = gen_trial(scenario, np.random.default_rng(data_seed))
    config = SamplerConfig.from_mapping({**config_map, "seed": fit_seed,
                                         "interaction": interaction})
    draws = run_chain(dataset, scenario.design, config)
    return draws.theta.mean(axis=0)


def _slot_truth(scenario):
    """True value per free coefficient slot for the scenario's design."""
    design = scenario.design
    truth = np.empty(design.n_coefficients)
    for g, (k, slot) in enumerate(design.global_slots):
        truth[g] = scenario.outcome_truth[k].get(slot, 0.0)
    return truth


def replicate_study(design_name, rho, n, replicates, seed, config_map=None,
                    interaction=False, workers=None):
    """Bias/SE table over seeded simulation replicates.

    Returns (design, truth, estimates) with estimates (R, Q); seeds are
    spawned from the master seed so the result does not depend on the
    worker schedule.
    """
    config_map = dict(config_map or {})
    if design_name == "engage":
        scenario = engage_scenario(rho=rho, n=n, interaction=interaction)
    else:
        scenario = general_scenario(rho=rho, n=n)
    children = np.random.SeedSequence(seed).spawn(replicates)
    seeds = [(int(c.generate_state(2)[0]), int(c.generate_state(2)[1] >> 1)) for c in children]
    if len({fs for _, fs in seeds}) != len(seeds):
        raise ValueError("derived fit seeds collide; choose a different master seed")
    payloads = [
        (design_name, rho, n, interaction, ds, fs, config_map) for ds, fs in seeds
    ]
    workers = workers or _worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            estimates = list(pool.map(_replicate_task, payloads))
    else:
        estimates = [_replicate_task(p) for p in payloads]
    return scenario.design, _slot_truth(scenario), np.array(estimates)


def cmd_replicate(args):
    config_map = {}
    if args.config:
        cp = configparser.ConfigParser()
        with open(args.config, encoding="utf-8") as fh:
            cp.read_file(fh)
        if cp.has_section("sampler"):
            config_map.update(dict(cp["sampler"]))
    design, truth, estimates = replicate_study(
        args.design, args.rho, args.n, args.replicates, args.seed,
        config_map=config_map, interaction=args.interaction,
    )
    bias = estimates.mean(axis=0) - truth
    se = estimates.std(axis=0, ddof=1)
    os.makedirs(args.out, exist_ok=True)

    with open(os.path.join(args.out, "bias_se_long.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence", "slot", "truth", "bias", "se"])
        for g, (k, slot) in enumerate(design.global_slots):
            w.writerow([k, slot, repr(float(truth[g])), repr(float(bias[g])), repr(float(se[g]))])
    # wide layout: one row per parameter name, one column per sequence
    slot_order = []
    for k, slot in design.slot_names:
        if slot not in slot_order:
            slot_order.append(slot)
    cell = {}
    for s in design.sequences:
        gid = design.coef_maps[s.k - 1]
        names = ["intercept"] + ["*".join(c) for c in s.columns]
        for nm, g in zip(names, gid):
            cell[(nm, s.k)] = f"{bias[g]:.2f} ({se[g]:.2f})"
    with open(os.path.join(args.out, "bias_se.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter"] + [f"seq{k}" for k in range(1, design.K + 1)])
        for nm in slot_order:
            w.writerow([nm] + [cell.get((nm, k), "--") for k in range(1, design.K + 1)])
    _write_manifest(args.out, {
        "command": "replicate",
        "design": args.design,
        "rho": args.rho,
        "n": args.n,
        "replicates": args.replicates,
        "interaction": args.interaction,
        "seed": args.seed,
        "config": config_map,
    })
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="smartstrata",
                                description="SMART compliance-strata analysis")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic trial")
    sim.add_argument("--design", choices=["engage", "general"], default="engage")
    sim.add_argument("--rho", type=float, default=0.2)
    sim.add_argument("--n", type=int, default=250)
    sim.add_argument("--interaction", action="store_true")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="run the posterior sampler on a dataset")
    fit.add_argument("--data", required=True)
    fit.add_argument("--design", choices=["engage", "general", "file"], default="engage")
    fit.add_argument("--design-file")
    fit.add_argument("--config", help="INI file with a [sampler] section")
    fit.add_argument("--seed", type=int)
    fit.add_argument("--interaction", action="store_true")
    fit.add_argument("--response-variant", choices=["a4", "a5"])
    fit.add_argument("--y-transform", choices=["none", "log"], default=None)
    fit.add_argument("--y-offset", type=float, default=0.5)
    fit.add_argument("--out", required=True)
    fit.set_defaults(func=cmd_fit)

    est = sub.add_parser("estimate", help="summaries from saved posterior draws")
    est.add_argument("--draws", required=True, help="output directory of a fit run")
    est.add_argument("--data", help="override the dataset path from the fit manifest")
    est.add_argument("--alpha", type=float, default=0.05)
    est.add_argument("--classes", help="e.g. 0.25-0.5,0.5-0.75,0.75-1.0,1.0")
    est.add_argument("--bootstrap", type=int, default=1000)
    est.add_argument("--out", required=True)
    est.set_defaults(func=cmd_estimate)

    rep = sub.add_parser("replicate", help="seeded simulation study with bias/SE table")
    rep.add_argument("--design", choices=["engage", "general"], default="engage")
    rep.add_argument("--rho", type=float, default=0.2)
    rep.add_argument("--n", type=int, default=250)
    rep.add_argument("--replicates", type=int, default=20)
    rep.add_argument("--interaction", action="store_true")
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--config")
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=cmd_replicate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SamplerError, CollinearityError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
