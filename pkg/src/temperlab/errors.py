"""Exception types shared across the package."""


class TemperlabError(Exception):
    """Base class for all package errors."""


class ConfigError(TemperlabError):
    """A configuration value violates its documented constraint."""


class DataError(TemperlabError):
    """Input data is malformed: bad token ids, mismatched files, etc."""


class ContractError(TemperlabError):
    """A caller broke an API precondition."""


class ShapeError(ContractError):
    """Operand shapes are incompatible."""


class NumericError(TemperlabError):
    """A numeric invariant failed, e.g. non-finite values mid-computation."""
