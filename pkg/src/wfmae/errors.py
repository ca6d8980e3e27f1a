"""Exception hierarchy shared across the package.

CLI exit-code mapping: ContractError/UsageError -> 1, DataError -> 2,
NumericFailure -> 3.
"""


class WfmaeError(Exception):
    """Base class for all package errors."""


class ContractError(WfmaeError):
    """A caller violated a documented precondition."""


class DimensionError(ContractError):
    """Shapes are inconsistent for the requested operation."""


class DataError(WfmaeError):
    """On-disk data is missing, malformed, or inconsistent."""


class TransferError(DataError):
    """Strict checkpoint loading hit a name or shape mismatch."""


class NumericFailure(WfmaeError):
    """A non-finite value appeared where finite math was required."""


class UsageError(WfmaeError):
    """Bad command line or config input."""
