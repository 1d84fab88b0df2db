"""Exception hierarchy shared by all modules.

``ValidationError`` marks bad inputs (CLI exit code 2); ``NumericalFailure``
marks a numeric state the library refuses to paper over (exit code 3).
"""


class StablePotError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(StablePotError, ValueError):
    pass


class DimensionMismatch(ValidationError):
    pass


class RecurrentRegime(ValidationError):
    """Whole-space Green function requested where the process is recurrent."""


class NumericalFailure(StablePotError, RuntimeError):
    pass


class QuadratureError(NumericalFailure):
    def __init__(self, message, last_iterates=None):
        super().__init__(message)
        self.last_iterates = last_iterates


class MaxStepsExceeded(NumericalFailure):
    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class NonContraction(NumericalFailure):
    def __init__(self, message, sequence=None):
        super().__init__(message)
        self.sequence = sequence


class NotGaugeable(NumericalFailure):
    pass


class EnvelopeFailure(NumericalFailure):
    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class NotHarmonic(NumericalFailure):
    """Input failed a harmonicity or nonnegativity gate."""

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst
