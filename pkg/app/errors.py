"""
Exception hierarchy shared by the solver services and the CLI.
"""
from typing import Optional

import numpy as np


class BepError(Exception):
    """Base class for every error raised by the toolkit."""


class UsageError(BepError, ValueError):
    """A precondition was violated (dimension mismatch, bad parameter)."""


class ConfigError(UsageError):
    """Malformed run configuration; carries the offending field and line."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ConvergenceError(BepError, RuntimeError):
    """An inner iteration ran out of budget before reaching its tolerance."""

    def __init__(self, message: str, last_iterate=None, residual: float = float("nan"),
                 iterations: int = 0):
        self.last_iterate = None if last_iterate is None else np.array(last_iterate, dtype=float)
        self.residual = float(residual)
        self.iterations = int(iterations)
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")


class NumericalError(BepError, ArithmeticError):
    """A public operation produced NaN or Inf."""


class EmptySolutionSetError(BepError):
    """The grid oracle found no point solving the lower-level problem."""
