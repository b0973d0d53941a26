"""Tempered Bayesian inference under data augmentation.

Closed-form conjugate and linear-regression results, an augmentation
engine, a small group-equivariant network stack, tempered SG-MCMC and
residual diagnostics.
"""

__version__ = "0.1.0"

from .augment import AugmentationBank, AugmentationTransformer, make_bank
from .conjugate import GaussianMeanModel, GaussianMeanPosterior, correlated_posterior, optimal_temperature
from .diagnostics import effective_sample_size, empirical_error_correlation, intraclass_correlation
from .linreg import AugmentedBayesianRegression, optimal_kl_temperature
from .sampler import PriorSpec, SGMCMCClassifier, SgMcmcConfig, bma_predict, run_chain

__all__ = [
    "AugmentationBank", "AugmentationTransformer", "AugmentedBayesianRegression", "GaussianMeanModel",
    "GaussianMeanPosterior", "PriorSpec", "SGMCMCClassifier", "SgMcmcConfig", "bma_predict",
    "correlated_posterior", "effective_sample_size", "empirical_error_correlation",
    "intraclass_correlation", "make_bank", "optimal_kl_temperature", "optimal_temperature", "run_chain",
    "__version__",
]
