"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ArithmeticError):
    """An input lies outside the numerical domain of the operation."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class PermutationError(IndexError):
    """An index list that must be a permutation is not one."""


class ParseError(ValueError):
    """A text input could not be parsed; carries the offending line number."""
