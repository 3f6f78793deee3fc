"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration errors exit 2,
training divergence exits 3, data errors exit 4.
"""


class ConfigurationError(ValueError):
    """A structural or configuration precondition was violated."""


class DataError(ValueError):
    """Input data violates a contract (non-finite, wrong domain, ...)."""


class SchemaError(DataError):
    """A required column or field is missing from tabular input."""


class ParseError(DataError):
    """A cell could not be parsed; carries row/column context in its message."""


class UsageError(RuntimeError):
    """An API was called out of contract (mismatched lengths, wrong order)."""


class TapeConsumedError(UsageError):
    """A tape was reused after its backward pass ran."""


class EvaluationError(RuntimeError):
    """A metric could not be evaluated (e.g. an empty sensitive group)."""


class IdealPointViolationError(EvaluationError):
    """An objective value fell below the ideal point; re-anchor the ideal."""


class ProtocolError(RuntimeError):
    """The federation protocol was violated (e.g. mismatched layouts)."""


class TrainingDivergedError(RuntimeError):
    """A loss or parameter became non-finite during training."""
