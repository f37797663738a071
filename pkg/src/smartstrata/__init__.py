"""Bayesian estimation of embedded treatment-regime outcomes by latent
compliance strata in two-stage SMART trials."""

from .augmentation import impute_all, impute_missing, initialize_missing
from .data import Dataset, SchemaError, ingest, write_dataset
from .design import (
    ComplianceClass,
    ConstraintSet,
    SmartDesign,
    TreatmentSequence,
    build_engage_design,
    build_general_design,
    design_from_config,
    design_to_config,
    quartile_classes,
    sequences_for_edtr,
    validate_constraints,
)
from .estimands import (
    BestSet,
    itt_summary,
    mcb_sets,
    pce_draw,
    pce_grid,
    pce_matrix,
    pce_summary,
    waic,
)
from .gibbs import PosteriorDraws, SamplerConfig, SamplerError, diagnostics, run_chain
from .mixture import (
    MixtureState,
    fit_mixture,
    mixture_density,
    stick_break,
    update_assignments,
    update_component_cov,
    update_component_mean,
    update_concentration,
    update_sticks,
)
from .outcomes import (
    OutcomeParams,
    ResponseParams,
    draw_outcome_params,
    draw_response_params,
    predict_mean,
    response_prob,
)
from .simgen import (
    Scenario,
    engage_scenario,
    gen_copula_compliances,
    gen_engage_trial,
    gen_general_trial,
    gen_trial,
    general_scenario,
)
from .truncmvn import (
    TruncatedGaussian,
    conditional,
    log_box_mass,
    log_density,
    normalizing_constant,
    sample,
)

__all__ = [
    "impute_all", "impute_missing", "initialize_missing",
    "Dataset", "SchemaError", "ingest", "write_dataset",
    "ComplianceClass", "ConstraintSet", "SmartDesign", "TreatmentSequence",
    "build_engage_design", "build_general_design", "design_from_config",
    "design_to_config", "quartile_classes", "sequences_for_edtr",
    "validate_constraints",
    "BestSet", "itt_summary", "mcb_sets", "pce_draw", "pce_grid",
    "pce_matrix", "pce_summary", "waic",
    "PosteriorDraws", "SamplerConfig", "SamplerError", "diagnostics", "run_chain",
    "MixtureState", "fit_mixture", "mixture_density", "stick_break",
    "update_assignments", "update_component_cov", "update_component_mean",
    "update_concentration", "update_sticks",
    "OutcomeParams", "ResponseParams", "draw_outcome_params",
    "draw_response_params", "predict_mean", "response_prob",
    "Scenario", "engage_scenario", "gen_copula_compliances",
    "gen_engage_trial", "gen_general_trial", "gen_trial", "general_scenario",
    "TruncatedGaussian", "conditional", "log_box_mass", "log_density",
    "normalizing_constant", "sample",
]
