"""Exception hierarchy shared by all vtprune modules.

The CLI maps these onto exit codes: InputFormatError -> 2,
ContractViolationError -> 3.
"""


class VtpruneError(Exception):
    """Base class for all vtprune errors."""


class InputFormatError(VtpruneError):
    """A file or tensor does not match the interchange contract."""


class ContractViolationError(VtpruneError):
    """A caller violated an operation precondition or data invariant."""


class InsufficientDataError(ContractViolationError):
    """Too few data points survive filtering for the statistic to exist."""
