"""Exception types shared across the package."""

from __future__ import annotations


class PtvError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PtvError, ValueError):
    """Grids, resolutions or array shapes are incompatible."""


class DomainError(PtvError, ValueError):
    """A numeric argument is outside its valid domain."""


class ConfigError(PtvError, ValueError):
    """A configuration value or combination is unusable."""


class InfiniteLikelihoodError(PtvError, ValueError):
    """A zero rate coincides with observed counts, making the NLL infinite.

    ``cell`` identifies the offending (tof_bin, shot_column) grid point.
    """

    def __init__(self, message: str, cell: tuple[int, int] | None = None):
        super().__init__(message)
        self.cell = cell


class InsufficientDataError(PtvError, ValueError):
    """Too few observations to perform the requested estimate."""


class FitConvergenceError(PtvError, RuntimeError):
    """An iterative fit hit its iteration budget before converging.

    Carries the best iterate found so diagnostics stay possible.
    """

    def __init__(self, message: str, best_params=None, best_nll: float | None = None):
        super().__init__(message)
        self.best_params = best_params
        self.best_nll = best_nll


class SolverDivergenceError(PtvError, RuntimeError):
    """The outer solver produced a non-finite objective. Carries the trace."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class ParseError(PtvError, ValueError):
    """A data file failed validation. Carries the line or byte position."""

    def __init__(self, message: str, line: int | None = None, offset: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.offset = offset
