"""Bayesian additive models for mixed-type multivariate functional data."""

from dataclasses import dataclass

from .backfit import BackfitConfig, BackfitResult, backfit_init
from .design import DesignBlocks, LatentBlock, TermBlock, build_design
from .mcmc import SamplerConfig, mcmc_sample, slice_sample_doubling
from .posterior import State, compute_eta, initial_state, latent_gradient, log_posterior, term_gradient
from .predict import Prediction, effect_curve_draws, eta_draws, posterior_mean_eta, predict
from .samples import PosteriorSamples
from .spec import LatentSpec, ModelSpec, PredictorSpec, PriorConfig, TermSpec, functional_regression_spec


@dataclass
class FitResult:
    design: DesignBlocks
    init: BackfitResult
    samples: PosteriorSamples


def fit_model(dataset, spec, bases=None, backfit=None, sampler=None):
    """Build the design, backfit to the posterior mode and run the sampler."""
    design = build_design(dataset, spec, bases)
    init = backfit_init(design, backfit)
    samples = mcmc_sample(design, init, sampler)
    return FitResult(design, init, samples)


__all__ = [
    "BackfitConfig",
    "BackfitResult",
    "DesignBlocks",
    "FitResult",
    "LatentBlock",
    "LatentSpec",
    "ModelSpec",
    "PosteriorSamples",
    "Prediction",
    "PredictorSpec",
    "PriorConfig",
    "SamplerConfig",
    "State",
    "TermBlock",
    "TermSpec",
    "backfit_init",
    "build_design",
    "compute_eta",
    "effect_curve_draws",
    "eta_draws",
    "fit_model",
    "functional_regression_spec",
    "initial_state",
    "latent_gradient",
    "log_posterior",
    "mcmc_sample",
    "posterior_mean_eta",
    "predict",
    "slice_sample_doubling",
    "term_gradient",
]
