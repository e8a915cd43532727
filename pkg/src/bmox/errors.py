"""Exception types shared across the package."""


class BmoxError(Exception):
    """Base class for all errors raised by bmox."""


class DomainError(BmoxError, ValueError):
    """An argument lies outside the domain of an operation."""


class NumericError(BmoxError, ArithmeticError):
    """A numerical solver failed to bracket or converge."""


class SpaceConfigError(BmoxError, ValueError):
    """A space description is malformed or degenerate."""


class UnsupportedSpaceError(BmoxError, TypeError):
    """The operation is not defined for this space variant."""


class DegenerateInputError(BmoxError, ValueError):
    """The input makes a ratio or normalization meaningless (e.g. zero norm)."""
