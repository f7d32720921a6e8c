"""Exception hierarchy.

The CLI maps these families onto exit codes: configuration problems exit 1,
data problems exit 2, numerical failures exit 3.
"""


class HagclError(Exception):
    """Base class for errors raised by this package."""


class ContractError(HagclError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    pass


class DomainError(ContractError):
    """Input outside the mathematical domain of an operation."""


class SegmentIndexError(ContractError, IndexError):
    pass


class ConfigError(HagclError):
    pass


class DataError(HagclError):
    pass


class IngestionError(DataError):
    pass


class ParseError(DataError):
    pass


class ConsistencyError(DataError):
    pass


class CheckpointError(DataError):
    pass


class NumericalError(HagclError):
    pass
