"""Exception types raised across the package."""


class WncsError(Exception):
    """Base class for all package errors."""


class ConfigError(WncsError, ValueError):
    """Scenario could not be parsed or failed validation."""


class ScenarioParseError(ConfigError):
    pass


class ScenarioValidationError(ConfigError):
    pass


class ChannelDomainError(WncsError, ValueError):
    """Bandwidth/QoS pair outside the validity domain of the capacity formula."""


class DegenerateConditioningError(WncsError, ValueError):
    pass


class QuadratureError(WncsError, RuntimeError):
    pass


class RiccatiConvergenceError(WncsError, RuntimeError):
    def __init__(self, residual, iterations):
        super().__init__(
            f"Riccati iteration did not converge after {iterations} iterations "
            f"(residual {residual:.3e})"
        )
        self.residual = residual
        self.iterations = iterations


class ZeroStateError(WncsError, ValueError):
    pass


class InfeasibleCandidateError(WncsError, ValueError):
    """A simulation was asked to run a candidate that fails the constraints."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
