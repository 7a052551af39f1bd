"""Exception hierarchy shared by all modules.

Exit codes used by the CLI: 2 validation, 3 numerical/conditioning, 4 capacity.
"""


class AnchorfaError(Exception):
    exit_code = 1


class ValidationError(AnchorfaError):
    """Bad user input: dimension mismatches, malformed files, invalid arguments."""

    exit_code = 2


class ConditioningError(AnchorfaError):
    """Numerically degenerate input: singular mixing matrices, zero-probability
    conditioning events, ill-conditioned tensor decompositions."""

    exit_code = 3


class CapacityError(AnchorfaError):
    """Problem size exceeds the enumeration guard."""

    exit_code = 4


class ConvergenceWarning(UserWarning):
    """An iterative solver hit its iteration cap before reaching tolerance."""
