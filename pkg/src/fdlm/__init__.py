"""Functional dynamic linear models with Ornstein-Uhlenbeck covariance operators."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DegenerateChainError,
    DimensionMismatchError,
    FdlmError,
    GridMismatchError,
    ParameterDomainError,
    SamplerError,
    SingularOperatorError,
)
from .kalman import FilterOutput, FilterStep, SmoothStep, ffbs, forecast, kalman_filter, smooth  # noqa: E402
from .kernel import (  # noqa: E402
    DiscreteMeasure,
    Grid,
    OuParams,
    covariance_functional,
    gram_matrix,
    ou_kernel,
    safe_cholesky,
)
from .mcmc import (  # noqa: E402
    PosteriorDraws,
    PriorSpec,
    SamplerConfig,
    gibbs_sigma2,
    mh_logbeta,
    posterior_bands,
    run_sampler,
    sokal_mcse,
    summarize,
)
from .oracle import build_joint, condition  # noqa: E402
from .statespace import (  # noqa: E402
    DyadicOperator,
    FdlmSpec,
    FunctionalSeries,
    ModelMatrices,
    apply_dyadic,
    discretize_spec,
    local_level_spec,
    resample,
    simulate,
)
