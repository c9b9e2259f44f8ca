"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions are incompatible with the requested operation."""


class SingularMatrixError(ValueError):
    """A linear system has no reliable solution (pivot below tolerance)."""


class ContractError(ValueError):
    """An operation was called outside its documented domain."""


class DivergenceError(RuntimeError):
    """Inference dynamics blew up (energy exceeded the divergence bound)."""


class StiffnessError(RuntimeError):
    """Adaptive step size underflowed; the ODE is too stiff at this tolerance."""


class FormatError(ValueError):
    """A data file is malformed; the message carries the failing byte offset."""


class ConfigError(ValueError):
    """A run configuration failed validation; the message names the field path."""
