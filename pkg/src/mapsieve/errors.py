"""Exception hierarchy shared by every module."""


class MapsieveError(Exception):
    """Base class for all package errors."""


class DomainError(MapsieveError, ValueError):
    """An argument lies outside the domain of a mapping or basis."""


class ConfigurationError(MapsieveError, ValueError):
    """A configuration value violates a documented precondition."""


class SingularDesignError(MapsieveError, ArithmeticError):
    """The least squares design is numerically rank deficient."""

    def __init__(self, message, condition_number=float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class SimulationDivergenceError(MapsieveError, ArithmeticError):
    def __init__(self, index):
        super().__init__(f"simulation produced a non-finite value at index {index}")
        self.index = index


class NotFittedError(MapsieveError, RuntimeError):
    pass


class DegenerateNormalizationError(MapsieveError, ArithmeticError):
    pass


class TuningError(MapsieveError, RuntimeError):
    pass


class IngestionError(MapsieveError, ValueError):
    """Malformed input data; carries the offending row and column when known."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column
