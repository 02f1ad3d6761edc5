"""Exception hierarchy shared by the library and the command line."""


class MobGPError(Exception):
    """Base class for all toolkit errors."""


class InputError(MobGPError, ValueError):
    """Malformed, missing or too-short input."""


class DomainError(MobGPError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class ShapeError(MobGPError, ValueError):
    pass


class UnboundVariableError(MobGPError, KeyError):
    pass


class ValidationError(MobGPError, ValueError):
    """Model parameters violate their invariants."""


class DegeneracyError(MobGPError, ValueError):
    """The symbolic state is identically zero and cannot be a posynomial."""


class SizeLimitError(MobGPError, RuntimeError):
    pass


class FormatError(InputError):
    pass


class JoinError(InputError):
    pass


class GapError(InputError):
    pass


class TrainingError(MobGPError, RuntimeError):
    pass


class InfeasibleError(MobGPError, RuntimeError):
    def __init__(self, message, constraint=None, violation=None):
        super().__init__(message)
        self.constraint = constraint
        self.violation = violation


class NonConvergenceError(MobGPError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
