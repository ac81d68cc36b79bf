"""Exception types shared across the package.

The CLI maps these onto its exit codes, so library code should raise the
most specific one that applies.
"""


class GabpError(Exception):
    """Base class for all errors raised by this package."""


class InputFormatError(GabpError):
    """A file or flag could not be parsed (CLI exit code 2)."""


class DomainError(GabpError):
    """The input parsed fine but violates a model assumption (CLI exit code 1)."""


class IterationBudgetError(GabpError):
    """An iteration exhausted its budget before reaching tolerance (CLI exit code 3)."""


class ExistenceViolation(GabpError):
    """A factor-to-variable update whose defining integral does not exist (CLI exit code 5)."""
