"""Mixture-of-factor-models inference for mixed-scale longitudinal survey data."""

from .association import (
    GammaTrajectory,
    PredictiveDraw,
    gamma_trajectories,
    gk_gamma_exact,
    gk_gamma_fast,
    predictive_subjects,
)
from .dataset import PanelDataset, SubjectRecord, encode_covariates, load_dataset, save_dataset
from .draws import DrawRecord, read_draws
from .gibbs import run_chain
from .links import CutpointRule, Region, latent_region, sample_latent_coordinate, to_observed
from .model import (
    ChainState,
    ModelConfig,
    gp_kernel_matrix,
    init_state,
    latent_conditional_density,
    marginal_covariance,
    stick_to_weights,
)
from .schema import (
    CovariateSchema,
    LatentLayout,
    SubpopulationQuery,
    VariableSchema,
    latent_layout,
)
from .simgen import DgpSpec, generate, make_spec, oracle_gamma, score_mae
from .survey import WeightSummary, adjusted_weights, weighted_resample

__version__ = "0.1.0"

__all__ = [
    "ChainState", "CovariateSchema", "CutpointRule", "DgpSpec", "DrawRecord",
    "GammaTrajectory", "LatentLayout", "ModelConfig", "PanelDataset",
    "PredictiveDraw", "Region", "SubjectRecord", "SubpopulationQuery",
    "VariableSchema", "WeightSummary", "adjusted_weights", "encode_covariates",
    "gamma_trajectories", "generate", "gk_gamma_exact", "gk_gamma_fast",
    "gp_kernel_matrix", "init_state", "latent_conditional_density",
    "latent_layout", "latent_region", "load_dataset", "make_spec",
    "marginal_covariance", "oracle_gamma", "predictive_subjects", "read_draws",
    "run_chain", "sample_latent_coordinate", "save_dataset", "score_mae",
    "stick_to_weights", "to_observed", "weighted_resample",
]
