"""Exception hierarchy shared by all fdlm modules."""


class FdlmError(Exception):
    """Base class for every error raised by the package."""


class ParameterDomainError(FdlmError, ValueError):
    """A kernel or model parameter lies outside its admissible domain."""


class SingularOperatorError(FdlmError, ArithmeticError):
    """A covariance matrix could not be factorized even at maximum jitter."""


class DimensionMismatchError(FdlmError, ValueError):
    pass


class GridMismatchError(FdlmError, ValueError):
    """Data and model live on different grids, or a grid point is missing."""


class SizeGuardError(FdlmError, ValueError):
    pass


class DegenerateChainError(FdlmError, ValueError):
    """The chain has zero variance, so its autocorrelation is undefined."""


class ChainTooShortError(FdlmError, ValueError):
    pass


class MissingStateDrawsError(FdlmError, ValueError):
    pass


class ConfigError(FdlmError, ValueError):
    """Invalid run or sampler configuration.

    The message always starts with the dotted name of the offending field.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class IngestError(FdlmError, ValueError):
    pass


class SamplerError(FdlmError, RuntimeError):
    """Numerical failure inside the Gibbs sweep."""

    def __init__(self, iteration, step, cause):
        self.iteration = iteration
        self.step = step
        self.cause = cause
        super().__init__(f"sampler failed at iteration {iteration}, step {step!r}: {cause}")
