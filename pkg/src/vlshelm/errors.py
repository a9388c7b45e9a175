"""Exception hierarchy shared by all modules."""


class VlsHelmError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgumentError(VlsHelmError, ValueError):
    pass


class UnsupportedOperationError(VlsHelmError):
    pass


class SingularMatrixError(VlsHelmError):
    """The discrete operator could not be factorized."""


class NumericalBreakdownError(VlsHelmError):
    pass


class ConvergenceFailure(VlsHelmError):
    """An iterative solve hit its iteration limit.

    The residual history is kept on the exception so callers can report it.
    """

    def __init__(self, message, x=None, iterations=0, residual_history=()):
        super().__init__(message)
        self.x = x
        self.iterations = iterations
        self.residual_history = list(residual_history)


class IllConditionedRecoveryError(VlsHelmError):
    pass


class ObjectiveEvaluationError(VlsHelmError):
    pass


class ConfigError(VlsHelmError):
    pass
