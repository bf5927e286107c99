"""Bayesian calibration of SIR models whose contact and removal rates are
functions of covariates, with a joint Gaussian-process prior on the two rates."""

__version__ = "0.1.0"

from .data_io import (
    CovariateScaler,
    ObservationSeries,
    RunConfig,
    apply_infectious_shift,
    load_series,
    make_synthetic,
    scale_covariates,
)
from .estimator import FunctionalSIRCalibrator
from .gp import Hyperparams, build_cov, conditional_bg, inv_logit, logit
from .mcmc import ChainConfig, ChainSamples, PriorConfig, run_chain
from .posterior import predictive_samples, r0_samples, summarize, surface_samples
from .sensitivity import FactorDistribution, posterior_sensitivity
from .sir import Compartments, MeanModel, ParamPath, mean_curve, sir_step

__all__ = [
    "ChainConfig", "ChainSamples", "Compartments", "CovariateScaler", "FactorDistribution",
    "FunctionalSIRCalibrator", "Hyperparams", "MeanModel", "ObservationSeries", "ParamPath",
    "PriorConfig", "RunConfig", "apply_infectious_shift", "build_cov", "conditional_bg",
    "inv_logit", "load_series", "logit", "make_synthetic", "mean_curve", "posterior_sensitivity",
    "predictive_samples", "r0_samples", "run_chain", "scale_covariates", "sir_step", "summarize",
    "surface_samples",
]
