"""Exception types shared across the package."""


class SparseViewError(Exception):
    pass


class ShapeError(SparseViewError):
    """Tensor dimensions incompatible with the requested operation."""


class ContractError(SparseViewError):
    """A documented precondition was violated by the caller."""


class DomainError(SparseViewError):
    """Numeric argument outside the mathematically valid domain."""


class DataError(SparseViewError):
    """Dataset or checkpoint on disk is missing or malformed."""
