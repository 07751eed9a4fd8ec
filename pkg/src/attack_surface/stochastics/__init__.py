from .random import RandomStream, as_generator, as_stream
from .distributions import (
    DistributionSpec,
    exponential,
    gamma,
    weibull,
    lognormal,
    loglogistic,
    pareto,
    generalized_pareto,
    inverse_gaussian,
    mixture2,
    sample,
    sample_residual,
    survival,
    tail_integral,
    mean,
    variance,
    logpdf,
)
from .divergence import Histogram, divergence, divergence_table, METRICS
from .fitting import fit_mle, DistributionFitter, DEFAULT_CANDIDATES

__all__ = [
    "RandomStream", "as_generator", "as_stream",
    "DistributionSpec", "exponential", "gamma", "weibull", "lognormal",
    "loglogistic", "pareto", "generalized_pareto", "inverse_gaussian", "mixture2",
    "sample", "sample_residual", "survival", "tail_integral", "mean", "variance",
    "logpdf", "Histogram", "divergence", "divergence_table", "METRICS",
    "fit_mle", "DistributionFitter", "DEFAULT_CANDIDATES",
]
