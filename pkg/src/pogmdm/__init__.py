"""Interpretable mixture-of-experts diffusion prior for MRI reconstruction.

The package provides a learned product-of-Gaussian-mixture image prior on a
shearlet filter bank, denoising-score-matching training for its 1578
parameters, a non-linear parallel-imaging forward model, and a joint
posterior sampler that reconstructs the spin density together with the coil
sensitivities from undersampled k-space.
"""

from . import coil_prior, data_io, metrics, mri, sampler, shearlet, training
from .prior import (
    CharbonnierPrior,
    GmmExpert,
    MixturePrior,
    PogmdmModel,
    denoise,
    expert_log_and_dlog,
    neg_log_prior,
    prior_score,
    tv_score,
)
from .sampler import ReconResult, SamplerConfig, estimate, posterior_sample
from .shearlet import ShearletParams, ShearletSystem, adjoint, analyze, build_system
from .training import TrainConfig, dsm_loss, train

__version__ = "0.1.0"

__all__ = [
    "ShearletParams",
    "ShearletSystem",
    "build_system",
    "analyze",
    "adjoint",
    "GmmExpert",
    "PogmdmModel",
    "MixturePrior",
    "CharbonnierPrior",
    "expert_log_and_dlog",
    "neg_log_prior",
    "prior_score",
    "denoise",
    "tv_score",
    "TrainConfig",
    "dsm_loss",
    "train",
    "SamplerConfig",
    "ReconResult",
    "estimate",
    "posterior_sample",
    "coil_prior",
    "data_io",
    "metrics",
    "mri",
    "sampler",
    "shearlet",
    "training",
]
