"""Exception hierarchy. Each class maps to one CLI exit code."""

from __future__ import annotations


class L0CVError(Exception):
    exit_code = 1


class ConfigurationError(L0CVError, ValueError):
    exit_code = 2


class ParseError(ConfigurationError):
    """A CSV cell could not be read as a finite number."""

    def __init__(self, message: str, row: int | None = None, column: str | int | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class NumericError(L0CVError, ArithmeticError):
    exit_code = 3

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class InconsistencyError(NumericError):
    """Internal bookkeeping contradicted a proven invariant (e.g. an invalid upper bound)."""


class BudgetExhausted(L0CVError):
    exit_code = 4
