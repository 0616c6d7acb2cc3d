from .diagnostics import bulk_ess, ess, rank_rhat, split_rhat
from .draws import PosteriorDraws, Summary, posterior_summary, sample_posterior
from .models import ChoiceModel, ModelSpec, log_posterior, log_posterior_gradient
from .nuts import SamplerConfig, SamplerError, sample_nuts

__all__ = [
    "ChoiceModel",
    "ModelSpec",
    "PosteriorDraws",
    "SamplerConfig",
    "SamplerError",
    "Summary",
    "bulk_ess",
    "ess",
    "log_posterior",
    "log_posterior_gradient",
    "posterior_summary",
    "rank_rhat",
    "sample_nuts",
    "sample_posterior",
    "split_rhat",
]
