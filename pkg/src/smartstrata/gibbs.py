"""The full posterior sampler: data augmentation, mixture updates,
constrained outcome regression and the response model, iterated in the
fixed step order (impute, component means, component covariances,
assignments, sticks, concentration, regression blocks).

Runs are bit-reproducible: one ``numpy.random.Generator`` seeded from
the config drives every draw in a fixed consumption pattern, and the
persisted draw files format floats by shortest round-trip repr.
"""

from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from .augmentation import impute_all, initialize_missing
from .design import column_name, validate_constraints
from .mixture import (
    _PointStream,
    batch_log_box_mass,
    component_suffstats,
    init_mixture_state,
    stick_break,
    update_assignments,
    update_component_covs,
    update_component_means,
    update_concentration,
    update_sticks,
)
from .outcomes import OutcomeParams, ResponseParams, ResponseSampler, draw_outcome_params

__all__ = ["SamplerConfig", "PosteriorDraws", "SamplerError", "run_chain", "diagnostics",
           "write_diagnostics"]


class SamplerError(RuntimeError):
    """A module error inside the chain, annotated with the iteration."""


@dataclass(frozen=True)
class SamplerConfig:
    """Chain-length, Monte Carlo and model-variant settings."""

    H: int = 20
    iterations: int = 6000
    burn_in: int = 2000
    thin: int = 5
    seed: int = 0
    mc_budget: int = 2048
    mc_method: str = "sobol"
    tmvn_sweeps: int = 10
    logistic_init_steps: int = 10_000
    logistic_init_thin: int = 10
    logistic_refresh_steps: int = 20
    logistic_target_accept: float = 0.3
    response_variant: str = "a4"
    interaction: bool = False
    init_missing: str = "uniform"

    def __post_init__(self):
        if not self.iterations >= self.burn_in >= 0:
            raise ValueError("need iterations >= burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.response_variant not in ("a4", "a5"):
            raise ValueError("response_variant must be 'a4' or 'a5'")

    def to_mapping(self):
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def from_mapping(cls, mapping):
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in mapping:
                continue
            raw = mapping[f.name]
            if f.type == "bool" or isinstance(f.default, bool):
                kwargs[f.name] = raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes")
            elif isinstance(f.default, int):
                kwargs[f.name] = int(raw)
            elif isinstance(f.default, float):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = str(raw)
        return cls(**kwargs)


@dataclass
class PosteriorDraws:
    """Thinned posterior draws plus per-iteration logs.

    ``d_draws`` holds the complete compliance matrix of every kept draw
    (observed entries constant across draws); WAIC treats these imputed
    values as parameters.
    """

    design: object
    config: SamplerConfig
    subject_ids: np.ndarray
    missing_mask: np.ndarray
    theta: np.ndarray
    sigma2: np.ndarray
    gamma: dict
    alpha: np.ndarray
    w: np.ndarray
    etas: np.ndarray
    Sigmas: np.ndarray
    log_c: np.ndarray
    d_draws: np.ndarray
    occupancy: np.ndarray
    acceptance: dict
    kept_iterations: np.ndarray

    @property
    def n_draws(self):
        return self.theta.shape[0]

    def outcome_params_at(self, i):
        return OutcomeParams(self.design, self.theta[i], self.sigma2[i])

    def response_params_at(self, i):
        return ResponseParams(
            self.config.response_variant,
            {arm: g[i] for arm, g in self.gamma.items()},
        )

    # --- flat tabular persistence ------------------------------------
    def _param_columns(self):
        names, cols = [], []
        for s in self.design.sequences:
            gid = self.design.coef_maps[s.k - 1]
            slot_names = ["intercept"] + [column_name(c) for c in s.columns]
            for slot, g in zip(slot_names, gid):
                names.append(f"beta_seq{s.k}_{slot}")
                cols.append(self.theta[:, g])
        for k in range(1, self.design.K + 1):
            names.append(f"sigma2_seq{k}")
            cols.append(self.sigma2[:, k - 1])
        for arm, g in self.gamma.items():
            tag = "all" if arm == "all" else ("p1" if arm == 1 else "m1")
            for j in range(g.shape[1]):
                names.append(f"gamma_{tag}_{j}")
                cols.append(g[:, j])
        names.append("alpha")
        cols.append(self.alpha)
        H, m = self.w.shape[1], self.etas.shape[2]
        coords = self.design.coords
        for h in range(H):
            names.append(f"w_{h + 1}")
            cols.append(self.w[:, h])
        for h in range(H):
            for j in range(m):
                names.append(f"eta_{h + 1}_{coords[j]}")
                cols.append(self.etas[:, h, j])
        for h in range(H):
            for i in range(m):
                for j in range(i, m):
                    names.append(f"Sigma_{h + 1}_{coords[i]}_{coords[j]}")
                    cols.append(self.Sigmas[:, h, i, j])
        for h in range(H):
            names.append(f"logc_{h + 1}")
            cols.append(self.log_c[:, h])
        names.append("n_occupied")
        cols.append(self.occupancy[self.kept_iterations - 1].astype(float))
        return names, cols

    def save(self, out_dir):
        """Write draws.csv and imputed.csv under ``out_dir``."""
        os.makedirs(out_dir, exist_ok=True)
        names, cols = self._param_columns()
        with open(os.path.join(out_dir, "draws.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", *names])
            for i in range(self.n_draws):
                writer.writerow(
                    [int(self.kept_iterations[i])] + [repr(float(c[i])) for c in cols]
                )
        coords = self.design.coords
        subj, coord = np.nonzero(self.missing_mask)
        with open(os.path.join(out_dir, "imputed.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["iteration"]
                + [f"D_{self.subject_ids[i]}_{coords[j]}" for i, j in zip(subj, coord)]
            )
            for i in range(self.n_draws):
                vals = self.d_draws[i, subj, coord]
                writer.writerow([int(self.kept_iterations[i])] + [repr(float(v)) for v in vals])

    @classmethod
    def load(cls, out_dir, design, dataset, config):
        """Rebuild draws from the files written by :meth:`save`."""
        with open(os.path.join(out_dir, "draws.csv"), newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = np.array([[float(v) for v in row] for row in reader])
        col = {name: i for i, name in enumerate(header)}
        n_draws = rows.shape[0]
        h, m = config.H, design.m
        theta = np.empty((n_draws, design.n_coefficients))
        for g, (k, slot) in enumerate(design.global_slots):
            theta[:, g] = rows[:, col[f"beta_seq{k}_{slot}"]]
        sigma2 = np.column_stack(
            [rows[:, col[f"sigma2_seq{k}"]] for k in range(1, design.K + 1)]
        )
        gamma = {}
        if config.response_variant == "a4":
            gamma["all"] = np.column_stack([rows[:, col[f"gamma_all_{j}"]] for j in range(4)])
        else:
            gamma[1] = np.column_stack([rows[:, col[f"gamma_p1_{j}"]] for j in range(2)])
            gamma[-1] = np.column_stack([rows[:, col[f"gamma_m1_{j}"]] for j in range(2)])
        w = np.column_stack([rows[:, col[f"w_{i + 1}"]] for i in range(h)])
        etas = np.empty((n_draws, h, m))
        sigmas = np.empty((n_draws, h, m, m))
        log_c = np.empty((n_draws, h))
        for i in range(h):
            log_c[:, i] = rows[:, col[f"logc_{i + 1}"]]
            for j in range(m):
                etas[:, i, j] = rows[:, col[f"eta_{i + 1}_{design.coords[j]}"]]
            for a in range(m):
                for b in range(a, m):
                    v = rows[:, col[f"Sigma_{i + 1}_{design.coords[a]}_{design.coords[b]}"]]
                    sigmas[:, i, a, b] = v
                    sigmas[:, i, b, a] = v
        missing = dataset.missing_mask()
        d_draws = np.tile(np.nan_to_num(dataset.d_obs, nan=0.0), (n_draws, 1, 1))
        with open(os.path.join(out_dir, "imputed.csv"), newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            imp_header = next(reader)
            imp_rows = np.array([[float(v) for v in row] for row in reader])
        id_pos = {str(sid): i for i, sid in enumerate(dataset.ids)}
        coord_pos = {c: j for j, c in enumerate(design.coords)}
        for c_i, name in enumerate(imp_header[1:], start=1):
            body = name[2:]  # strip "D_"
            sid, coord = body.rsplit("_", 1)
            d_draws[:, id_pos[sid], coord_pos[coord]] = imp_rows[:, c_i]
        kept_iter = rows[:, col["iteration"]].astype(int)
        occupancy = np.zeros(config.iterations, dtype=int)
        occupancy[kept_iter - 1] = rows[:, col["n_occupied"]].astype(int)
        return cls(
            design=design, config=config, subject_ids=dataset.ids,
            missing_mask=missing, theta=theta, sigma2=sigma2, gamma=gamma,
            alpha=rows[:, col["alpha"]], w=w, etas=etas, Sigmas=sigmas,
            log_c=log_c, d_draws=d_draws, occupancy=occupancy,
            acceptance={}, kept_iterations=kept_iter,
        )


def run_chain(dataset, design, config, rng=None):
    """Run one chain and return the thinned draws.

    ``rng`` defaults to a fresh generator seeded from ``config.seed``;
    identical (dataset, design, config) therefore give bit-identical
    results.
    """
    violations = validate_constraints(design)
    if violations:
        raise ValueError(f"design has unidentified slots: {violations}")
    if config.interaction != design.has_interactions:
        raise ValueError(
            "config.interaction does not match the design's columns; "
            "build the design with the same flag"
        )
    if rng is None:
        rng = np.random.default_rng(config.seed)

    n, m, H = dataset.n, design.m, config.H
    try:
        d_full = initialize_missing(dataset, design, rng, method=config.init_missing)
        state = init_mixture_state(d_full, H, rng)
        points = _PointStream(m, config.mc_budget, config.mc_method, rng)
        state.log_c = -batch_log_box_mass(state.etas, state.Sigmas, points())

        params = draw_outcome_params(dataset, d_full, design, np.ones(design.K), rng)
        resp = ResponseSampler(
            variant=config.response_variant,
            init_steps=config.logistic_init_steps,
            init_thin=config.logistic_init_thin,
            refresh_steps=config.logistic_refresh_steps,
            target_accept=config.logistic_target_accept,
        )
        resp.initialize(dataset, d_full, rng)
    except Exception as exc:
        raise SamplerError(f"initialization: {exc}") from exc

    n_kept = (config.iterations - config.burn_in) // config.thin
    kept = {
        "theta": np.empty((n_kept, design.n_coefficients)),
        "sigma2": np.empty((n_kept, design.K)),
        "alpha": np.empty(n_kept),
        "w": np.empty((n_kept, H)),
        "etas": np.empty((n_kept, H, m)),
        "Sigmas": np.empty((n_kept, H, m, m)),
        "log_c": np.empty((n_kept, H)),
        "d": np.empty((n_kept, n, m)),
        "iter": np.empty(n_kept, dtype=int),
    }
    gamma_kept = {arm: np.empty((n_kept, g.size)) for arm, g in resp.gamma.items()}
    occupancy = np.zeros(config.iterations, dtype=int)

    slot = 0
    for it in range(config.iterations):
        try:
            pts = points()
            d_full = impute_all(d_full, dataset, design, state, params, rng,
                                sweeps=config.tmvn_sweeps)
            counts, means, scatters = component_suffstats(d_full, state.z, H)
            update_component_means(state, d_full, pts, rng, counts, means)
            update_component_covs(state, d_full, pts, rng, counts, means, scatters)
            state.z = update_assignments(d_full, state, rng)
            state.wprime = update_sticks(state.z, H, state.alpha, rng)
            state.w = stick_break(state.wprime)
            update_concentration(state, rng)
            params = draw_outcome_params(dataset, d_full, design, params.sigma2, rng)
            resp.adapting = it < config.burn_in
            resp.refresh(dataset, d_full, rng)
        except Exception as exc:
            raise SamplerError(f"iteration {it + 1}: {exc}") from exc

        occupancy[it] = int((state.occupancy() > 0).sum())
        if it + 1 > config.burn_in and (it + 1 - config.burn_in) % config.thin == 0:
            kept["theta"][slot] = params.theta
            kept["sigma2"][slot] = params.sigma2
            kept["alpha"][slot] = state.alpha
            kept["w"][slot] = state.w
            kept["etas"][slot] = state.etas
            kept["Sigmas"][slot] = state.Sigmas
            kept["log_c"][slot] = state.log_c
            kept["d"][slot] = d_full
            kept["iter"][slot] = it + 1
            for arm in gamma_kept:
                gamma_kept[arm][slot] = resp.gamma[arm]
            slot += 1

    acceptance = state.acceptance_rates()
    acceptance["logistic"] = resp.acceptance_rate
    return PosteriorDraws(
        design=design,
        config=config,
        subject_ids=dataset.ids,
        missing_mask=dataset.missing_mask(),
        theta=kept["theta"],
        sigma2=kept["sigma2"],
        gamma=gamma_kept,
        alpha=kept["alpha"],
        w=kept["w"],
        etas=kept["etas"],
        Sigmas=kept["Sigmas"],
        log_c=kept["log_c"],
        d_draws=kept["d"],
        occupancy=occupancy,
        acceptance=acceptance,
        kept_iterations=kept["iter"],
    )


def diagnostics(draws):
    """Trace means/sds, acceptance rates and the occupancy history.

    The maximum occupied-component count supports the usual check that H
    was set comfortably above the number of clusters the data use.
    """
    if draws.n_draws < 2:
        raise ValueError("need at least 2 draws for diagnostics")
    names, cols = draws._param_columns()
    table = {
        name: (float(np.mean(c)), float(np.std(c, ddof=1))) for name, c in zip(names, cols)
    }
    return {
        "parameters": table,
        "acceptance": dict(draws.acceptance),
        "occupancy": draws.occupancy.copy(),
        "max_occupied": int(draws.occupancy.max()),
    }


def write_diagnostics(diag, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["name", "mean", "sd"])
        for name, (mean, sd) in diag["parameters"].items():
            writer.writerow([name, repr(mean), repr(sd)])
        for name, rate in diag["acceptance"].items():
            writer.writerow([f"acceptance_{name}", repr(float(rate)), ""])
        writer.writerow(["max_occupied", diag["max_occupied"], ""])
