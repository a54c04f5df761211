"""Exception hierarchy.

The CLI maps the three top-level families to exit codes (config 2,
numerical 3, IO 4).
"""


class HTQueueError(Exception):
    pass


class ConfigError(HTQueueError, ValueError):
    pass


class LoadNotCritical(ConfigError):
    pass


class NonPositiveParameter(ConfigError):
    pass


class InitialStateOutsideDomain(ConfigError):
    pass


class UnknownConfigKey(ConfigError):
    pass


class UnsupportedPrimitives(ConfigError):
    pass


class MismatchedScenarios(ConfigError):
    pass


class HorizonNonPositive(ConfigError):
    pass


class InvalidInterval(ConfigError):
    pass


class EmptyPath(ConfigError):
    pass


class DomainError(HTQueueError, ValueError):
    pass


class NumericalError(HTQueueError, ArithmeticError):
    pass


class NoConvergence(NumericalError):
    pass


class GridTooCoarse(NumericalError):
    pass


class BoundaryNotFound(NumericalError):
    pass


class BiasBudgetExceeded(NumericalError):
    pass


class NoAdmissions(NumericalError):
    def __init__(self, cls: int):
        super().__init__(f"no admissions observed for class {cls + 1}")
        self.cls = cls


class InvariantViolation(HTQueueError, AssertionError):
    """Raised by the simulator when a state invariant breaks at an event."""
