"""Spatial probit item factor analysis with Gaussian-process factors."""

__version__ = "0.1.0"

from .errors import GeofactorError, IntegrityError, NumericalError, ValidationError
from .model import (
    Dataset, ItemConstraint, LoadingStructure, ModelSpec, PriorSpec, apply_constraint,
    build_loading_matrix, resolve_discriminations, standardize_covariates,
    validate_identifiability,
)
from .covariance import factor_cov, marginal_z_moments
from .sampler import (
    ChainOutput, SamplerConfig, rescale_samples, run_chain, run_chains,
)
from .inference import (
    DicReport, PredictionResult, Variogram, dic, empirical_variogram, exceedance_prob,
    log_likelihood_y, predict_factors, trace_summary,
)
from .simulate import (
    OracleResult, TrueParams, joint_gaussian_oracle, quadrature_posterior_oracle,
    simulate_dataset,
)
from .io import (
    GridSpec, RunManifest, export_prediction, load_chain, load_dataset, parse_config,
    write_chain, write_dataset,
)

__all__ = [
    "__version__", "GeofactorError", "IntegrityError", "NumericalError", "ValidationError",
    "Dataset", "ItemConstraint", "LoadingStructure", "ModelSpec", "PriorSpec",
    "apply_constraint", "build_loading_matrix", "resolve_discriminations",
    "standardize_covariates", "validate_identifiability", "factor_cov", "marginal_z_moments",
    "ChainOutput", "SamplerConfig", "rescale_samples", "run_chain", "run_chains", "DicReport",
    "PredictionResult", "Variogram", "dic", "empirical_variogram", "exceedance_prob",
    "log_likelihood_y", "predict_factors", "trace_summary", "OracleResult", "TrueParams",
    "joint_gaussian_oracle", "quadrature_posterior_oracle", "simulate_dataset", "GridSpec",
    "RunManifest", "export_prediction", "load_chain", "load_dataset", "parse_config",
    "write_chain", "write_dataset",
]
