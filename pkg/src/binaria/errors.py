"""Exception taxonomy shared by all binaria modules."""


class BinariaError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(BinariaError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class RangeError(BinariaError, ValueError):
    """A query falls outside the representable range (e.g. beyond a table)."""


class NumericError(BinariaError, ArithmeticError):
    """A numerical procedure failed to reach its accuracy target."""


class DegenerateInputError(BinariaError, ValueError):
    """Input is structurally degenerate (zero mass, zero inertia, ...)."""


class ConfigurationError(BinariaError, ValueError):
    """A configuration file or grid/problem setup is invalid."""


class QuantizationError(BinariaError, ValueError):
    """A field cannot be atomized to the requested granularity."""


class NoSolutionError(BinariaError, RuntimeError):
    """A root/bracket search exhausted its configured bounds."""


class IncomparableMeasuresError(BinariaError, ValueError):
    """Two discrete measures cannot be compared (atom count or mass mismatch)."""


class SolverDivergenceError(NumericError):
    """The fixed-point iteration diverged; carries partial diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
