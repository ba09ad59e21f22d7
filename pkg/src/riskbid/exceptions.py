"""Exception hierarchy for riskbid."""

from sklearn.exceptions import NotFittedError

__all__ = [
    "RiskBidError",
    "InvalidInputError",
    "InsufficientDataError",
    "LogParseError",
    "NotFittedError",
]


class RiskBidError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(RiskBidError, ValueError):
    """An argument violates a documented precondition."""


class InsufficientDataError(InvalidInputError):
    """Not enough (or degenerate) data to fit or derive a quantity."""


class LogParseError(InvalidInputError):
    """A log or checkpoint line could not be parsed."""

    def __init__(self, message: str, lineno: int | None = None, path=None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}: "
        elif where:
            where += " "
        super().__init__(where + message)
