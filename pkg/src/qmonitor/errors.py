"""Exception hierarchy shared by every qmonitor module."""


class QMonitorError(Exception):
    """Base class for all errors raised by qmonitor."""


class ModelDefinitionError(QMonitorError, ValueError):
    """Operators, states or models are inconsistent (shape, hermiticity, ...)."""


class DomainError(QMonitorError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class PreconditionError(QMonitorError, ValueError):
    """A documented precondition of an operation was violated."""


class IntegrationError(QMonitorError, RuntimeError):
    """Numerical integration produced an invalid state."""


class IntegrationBlowupError(IntegrationError):
    """Non-finite amplitudes appeared during stochastic integration."""

    def __init__(self, step: int, message: str = "non-finite amplitudes",
                 trajectory: int | None = None):
        self.step = step
        self.trajectory = trajectory
        where = f"step {step}"
        if trajectory is not None:
            where = f"trajectory {trajectory}, {where}"
        super().__init__(f"{message} at {where}")


class ConfigError(QMonitorError, ValueError):
    """Run configuration failed to parse or validate.

    ``errors`` holds every problem found, each prefixed by its field path.
    """

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
