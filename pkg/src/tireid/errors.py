"""Exception hierarchy shared across the identification pipeline."""


class TireIdError(Exception):
    """Base class for all package errors."""


class DomainError(TireIdError, ValueError):
    """An input lies outside the domain where the model is defined."""


class ConfigError(TireIdError, ValueError):
    """A configuration value is invalid."""


class ContractError(TireIdError, ValueError):
    """Arguments are mutually inconsistent (shape, length, dimension)."""


class SingularityError(DomainError):
    """A matrix inverse or quotient is numerically undefined."""


class PathExhausted(TireIdError):
    """The vehicle has run past the end of the reference path."""


class TrainingError(TireIdError, RuntimeError):
    """Residual-model training diverged."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InstabilityError(TireIdError, RuntimeError):
    """A simulated trajectory left the physically meaningful region."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class StageError(TireIdError, RuntimeError):
    """Failure inside one stage of the iterative identification loop."""

    def __init__(self, stage, iteration, cause):
        super().__init__(f"[{stage}] outer iteration {iteration}: {cause}")
        self.stage = stage
        self.iteration = iteration
        self.cause = cause
