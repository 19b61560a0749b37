"""Exception hierarchy.

Every error raised by the library derives from :class:`PaneitzError`. The
CLI maps the three families below onto exit codes 2, 3 and 4.
"""


class PaneitzError(Exception):
    pass


# -- configuration / usage (exit code 2) -----------------------------------

class ConfigurationError(PaneitzError, ValueError):
    """Invalid parameters, mismatched shapes or unsupported combinations."""


class UnsupportedBackendError(ConfigurationError):
    pass


class TruncationError(ConfigurationError):
    """A product or composite does not fit in the truncated basis."""

    def __init__(self, message, required_degree=None):
        super().__init__(message)
        self.required_degree = required_degree


class DirectionNotAdmissibleError(ConfigurationError):
    pass


class InvalidMapError(ConfigurationError):
    pass


class HypothesisViolationError(ConfigurationError):
    def __init__(self, message, node=None, value=None):
        super().__init__(message)
        self.node = node
        self.value = value


# -- numerical failures (exit code 3) ---------------------------------------

class NumericalError(PaneitzError, ArithmeticError):
    pass


class IllConditionedMassError(NumericalError):
    pass


class NonConvergenceError(NumericalError):
    def __init__(self, message, best_residual=None, history=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.history = history or []


# -- certification failures (exit code 4) -----------------------------------

class CertificationFailure(PaneitzError):
    pass
