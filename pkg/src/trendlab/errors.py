"""Exception hierarchy shared by every trendlab module."""


class TrendlabError(Exception):
    """Base class for all trendlab errors."""


class DimensionError(TrendlabError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(TrendlabError, ValueError):
    """An argument lies outside the domain of a function (e.g. log of 0)."""


class NumericalError(TrendlabError, FloatingPointError):
    """A NaN or infinity was produced."""


class ContractError(TrendlabError, ValueError):
    """A documented precondition of an operation was violated."""


class ConfigurationError(TrendlabError, ValueError):
    """Invalid or inconsistent configuration."""


class ParseError(TrendlabError, ValueError):
    """Malformed input file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ValidationError(TrendlabError, ValueError):
    """Well-formed input whose content violates an invariant."""


class AlignmentError(TrendlabError, ValueError):
    """A factor series cannot be aligned to the target calendar."""


class UnsupportedModelError(TrendlabError, TypeError):
    """The operation requires a model kind that supports it."""


class TrainingAborted(TrendlabError, RuntimeError):
    """Training hit a non-finite loss or gradient.

    ``manifest`` holds the partial run record up to the failing step.
    """

    def __init__(self, message, manifest=None):
        super().__init__(message)
        self.manifest = manifest
