"""Mixed-type multivariate functional data: eigenbases, additive regression, MCMC."""

from .bases import EigenBasis
from .evaluate import CurveSet, pointwise_coverage, reconstruct_latent_ls, rrmse, scalar_metrics
from .families import get_family
from .fitter import FitResult, LatentSpec, SamplerConfig, fit_model, functional_regression_spec
from .funcdata import MultivariateFunctionalDataset, SamplingRegime, load_long_csv, write_long_csv
from .gfpca import BinSpec, GFPCAConfig, RefitConfig, UnivariateFPCA, univariate_gfpca
from .mfpca import MFPCAConfig, assemble_mfpca, eigenvalue_weights, estimate_basis, truncate
from .simulate import SimulationConfig, simulate_dataset, simulate_replicate

__all__ = [
    "BinSpec",
    "CurveSet",
    "EigenBasis",
    "FitResult",
    "GFPCAConfig",
    "LatentSpec",
    "MFPCAConfig",
    "MultivariateFunctionalDataset",
    "RefitConfig",
    "SamplerConfig",
    "SamplingRegime",
    "SimulationConfig",
    "UnivariateFPCA",
    "assemble_mfpca",
    "eigenvalue_weights",
    "estimate_basis",
    "fit_model",
    "functional_regression_spec",
    "get_family",
    "load_long_csv",
    "pointwise_coverage",
    "reconstruct_latent_ls",
    "rrmse",
    "scalar_metrics",
    "simulate_dataset",
    "simulate_replicate",
    "truncate",
    "univariate_gfpca",
    "write_long_csv",
]
