"""Confounding-aware linear dimension reduction of high-dimensional treatments.

Estimates a p x d basis such that the counterfactual mean outcome depends on
a p-dimensional treatment only through the d projected coordinates, using
kernel-smoothed estimating equations with optional inverse-probability
weighting and a mean-zero augmentation, plus a seeded benchmark harness.
"""

from .errors import (
    AllWeightsZero,
    CausalSdrError,
    DegenerateCovariance,
    EmptySampleSet,
    NonFiniteEntry,
    RankDeficient,
    SingularDesign,
    SingularSystem,
)
from .estimating_equations import Basis, MomentValue, u_augmented, u_ipw, u_regression
from .harness import (
    BenchConfig,
    RunRecord,
    estimate_basis,
    run_bench,
    run_method,
    summarize,
)
from .kernel_smoothing import (
    KernelConfig,
    ProjectedSample,
    epanechnikov,
    kernel_regress,
    nw_regress,
    product_kernel,
    rule_of_thumb_bandwidth,
)
from .metrics import pca_directions, projection_distance
from .nuisance_models import (
    FTildeModel,
    NuisanceSpec,
    ReferenceDensity,
    TreatmentModel,
    fit_ftilde,
    fit_treatment_model,
    ipw_weight,
    ipw_weights,
    linear_feature_map,
    q_expectation_given_c,
    zero_feature_map,
)
from .rng import RngStream, derive_seed
from .simulation import (
    Dataset,
    ScenarioSpec,
    SimulationTruth,
    generate,
    read_dataset_csv,
    true_basis,
    true_projection_targets,
    write_dataset_csv,
)
from .solver import SolveResult, SolverConfig, numeric_jacobian, solve

__all__ = [
    "AllWeightsZero",
    "Basis",
    "BenchConfig",
    "CausalSdrError",
    "Dataset",
    "DegenerateCovariance",
    "EmptySampleSet",
    "FTildeModel",
    "KernelConfig",
    "MomentValue",
    "NonFiniteEntry",
    "NuisanceSpec",
    "ProjectedSample",
    "RankDeficient",
    "ReferenceDensity",
    "RngStream",
    "RunRecord",
    "ScenarioSpec",
    "SimulationTruth",
    "SingularDesign",
    "SingularSystem",
    "SolveResult",
    "SolverConfig",
    "TreatmentModel",
    "derive_seed",
    "epanechnikov",
    "estimate_basis",
    "fit_ftilde",
    "fit_treatment_model",
    "generate",
    "ipw_weight",
    "ipw_weights",
    "kernel_regress",
    "linear_feature_map",
    "nw_regress",
    "numeric_jacobian",
    "pca_directions",
    "product_kernel",
    "projection_distance",
    "q_expectation_given_c",
    "read_dataset_csv",
    "rule_of_thumb_bandwidth",
    "run_bench",
    "run_method",
    "solve",
    "summarize",
    "true_basis",
    "true_projection_targets",
    "u_augmented",
    "u_ipw",
    "u_regression",
    "write_dataset_csv",
    "zero_feature_map",
]

__version__ = "0.1.0"
