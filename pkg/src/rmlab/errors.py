"""Exception types raised across the package."""


class RmlabError(Exception):
    """Base class for all package errors."""


class InvalidArgument(RmlabError, ValueError):
    pass


class ComplexityLimit(RmlabError):
    """A combinatorial cap was exceeded."""


class IncompleteTable(RmlabError, KeyError):
    pass


class PreconditionFailed(RmlabError):
    pass


class RemainderNotZero(RmlabError):
    """The truncated expansion is not exact for this polynomial degree."""


class Unsupported(RmlabError):
    pass


class NonConvergence(RmlabError):
    pass


class PositivityLoss(RmlabError):
    pass


class SingularStability(RmlabError):
    pass


class EmptySupport(RmlabError):
    pass


class IllConditioned(RmlabError):
    pass


class InvariantViolation(RmlabError):
    def __init__(self, message, graphs=()):
        super().__init__(message)
        self.graphs = list(graphs)


class ConfigError(RmlabError):
    pass


class VarianceWarning(UserWarning):
    pass


class DegenerateSampleWarning(UserWarning):
    pass
