"""Exception hierarchy."""


class AttnflowError(Exception):
    """Base class for all library errors."""


class ContractViolation(AttnflowError, ValueError):
    """An input violates a documented precondition."""


class NumericalFailure(AttnflowError, ArithmeticError):
    """A numerical routine failed to converge or produced non-finite output."""

    def __init__(self, message, shape=None):
        if shape is not None:
            message = f"{message} (matrix shape {shape[0]}x{shape[1]})"
        super().__init__(message)
        self.shape = shape


class DegenerateState(AttnflowError, ArithmeticError):
    """A token collapsed to (near) zero norm, usually from a too-large step."""


class GenerationFailure(AttnflowError, RuntimeError):
    """Random instance generation exhausted its resampling budget."""


class CertificateUnavailable(AttnflowError, ArithmeticError):
    """A certificate cannot be formed at the given state."""
