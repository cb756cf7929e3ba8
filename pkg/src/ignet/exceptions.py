"""Exception hierarchy shared by every ignet module."""


class IgnError(Exception):
    """Base class for all ignet errors."""


class DimensionError(IgnError, ValueError):
    """Operand shapes do not conform for the requested operation."""


class ContractError(IgnError, ValueError):
    """A documented precondition was violated by the caller."""


class NotPositiveDefiniteError(IgnError, ArithmeticError):
    """Cholesky failed for every jitter in the schedule."""

    def __init__(self, message, last_jitter=None):
        super().__init__(message)
        self.last_jitter = last_jitter


class NumericalFailure(IgnError, ArithmeticError):
    """A loss or gradient term became non-finite."""

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class TrainingDiverged(IgnError, RuntimeError):
    """Too many consecutive numerical failures during training."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class SchemaError(IgnError, ValueError):
    """Input data or configuration does not match the expected layout."""
