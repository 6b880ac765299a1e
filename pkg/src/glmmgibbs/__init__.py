"""Block Gibbs sampling for Bayesian linear mixed models with arbitrary fixed-effect designs.

The sampler handles rank-deficient ``X`` and ``p > N``; :func:`certify`
checks sufficient conditions for geometric ergodicity before a run.
"""

__version__ = "0.1.0"

from .certify import Certificate, certify
from .diagnostics import batch_means_mcse, effective_sample_size, summarize
from .gibbs import (
    Init,
    PrecisionState,
    SamplerConfig,
    SampleStore,
    ThetaState,
    draw_lambda_given_theta,
    draw_theta_given_lambda,
    gibbs_step,
    run_chains,
)
from .model import GlmmDesign, Model, PriorSpec, build_model

__all__ = [
    "Certificate", "GlmmDesign", "Init", "Model", "PrecisionState", "PriorSpec",
    "SampleStore", "SamplerConfig", "ThetaState", "batch_means_mcse", "build_model",
    "certify", "draw_lambda_given_theta", "draw_theta_given_lambda",
    "effective_sample_size", "gibbs_step", "run_chains", "summarize",
]
