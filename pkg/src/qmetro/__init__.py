"""Sequential Bayesian quantum metrology toolkit.

Simulates adaptive estimation experiments on spin (Ramsey) and photonic
(coherent-state) sensors, maintains the Bayesian posterior with a particle
filter, optimizes control policies by model-aware policy gradients, and
evaluates the reference precision bounds used for comparison.
"""

from jax import config as _jax_config

# All tolerances in this package assume double precision.
_jax_config.update("jax_enable_x64", True)

from qmetro.spaces import Continuous, Discrete, ParameterSpace, box_space
from qmetro.particles import (
    DegenerateEvidenceError,
    ParticleEnsemble,
    PosteriorMoments,
    bayes_update,
    effective_sample_size,
    init_from_prior,
    moments,
    resample,
)
from qmetro.nv_models import make_nv_model
from qmetro.engine import (
    ResourceBudget,
    TrainSettings,
    evaluate_policy,
    run_episode,
    train,
)
from qmetro.bounds import analytic_ramp, crb_curve, helstrom, pgm_error
from qmetro.config import ExperimentConfig, load_config

__all__ = [
    "Continuous",
    "Discrete",
    "ParameterSpace",
    "box_space",
    "ParticleEnsemble",
    "PosteriorMoments",
    "DegenerateEvidenceError",
    "init_from_prior",
    "bayes_update",
    "moments",
    "effective_sample_size",
    "resample",
    "make_nv_model",
    "ResourceBudget",
    "TrainSettings",
    "run_episode",
    "train",
    "evaluate_policy",
    "analytic_ramp",
    "crb_curve",
    "helstrom",
    "pgm_error",
    "ExperimentConfig",
    "load_config",
]

__version__ = "0.1.0"
