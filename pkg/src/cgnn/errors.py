"""Exception types shared across the package."""


class CgnnError(Exception):
    """Base class for all package errors."""


class ParseError(CgnnError):
    """Malformed record in an input file; message carries the line number."""


class ValidationError(CgnnError):
    """Structurally valid input that violates a domain invariant."""


class ShapeError(CgnnError):
    """Tensor operands whose shapes do not conform."""


class NumericError(CgnnError):
    """Non-finite values or numerically undefined operation."""


class ContractError(CgnnError):
    """A caller violated an operation's precondition."""


class ConfigError(CgnnError):
    """Bad experiment configuration; message names the offending key."""


class TrainingError(CgnnError):
    """Training diverged or could not proceed; message names the epoch."""
