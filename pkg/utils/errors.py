class RefineError(Exception):
    """Base class for every error raised by the sensing toolkit."""


class DomainError(RefineError, ValueError):
    """An argument lies outside the domain of the operation."""


class ShapeMismatchError(DomainError):
    pass


class ConfigurationError(RefineError, ValueError):
    """Unsupported or inconsistent configuration value."""


class ZeroVarianceCorpusError(DomainError):
    pass


class OperatorMismatchError(DomainError):
    """Measurements were produced by a different sensing operator or layout."""


class RankError(DomainError):
    def __init__(self, requested: int, available: int):
        self.requested = requested
        self.available = available
        super().__init__(
            f"Requested rank {requested} exceeds the available numerical rank {available}"
        )


class NumericalFailureError(RefineError, RuntimeError):
    def __init__(self, message: str, iteration: int = -1):
        self.iteration = iteration
        if iteration >= 0:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class FormatError(RefineError, ValueError):
    """Binary artifact with a wrong magic, kind or version."""
