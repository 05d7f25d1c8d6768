"""Exception types shared across the package."""


class WhitebenchError(Exception):
    """Base class for all package errors."""


class ValidationError(WhitebenchError, ValueError):
    """Input failed a contract check (non-finite values, bad enum, ...)."""


class ShapeError(ValidationError):
    """Operand dimensions are incompatible."""


class DegenerateSpectrumError(WhitebenchError):
    """A spectrum required to be nontrivial is identically zero."""


class DegenerateDataError(WhitebenchError):
    """No invertible column block exists (rank-deficient whitened data)."""


class DivergenceError(WhitebenchError):
    """An optimizer step produced non-finite values."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConvergenceError(WhitebenchError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class LineSearchError(WhitebenchError):
    """Backtracking stalled or was handed a non-descent direction."""


class ConfigError(WhitebenchError, ValueError):
    """A run configuration file is malformed or has unknown keys."""


class ParseError(WhitebenchError, ValueError):
    """A data file could not be parsed; message names the line/offset."""
