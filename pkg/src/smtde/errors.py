"""Exception types shared across the package."""


class SmtdeError(Exception):
    """Base class for all package-specific errors."""


class DomainError(SmtdeError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ValidationError(SmtdeError, ValueError):
    """Invalid problem, grid, or configuration data."""


class NonConvergenceError(SmtdeError, RuntimeError):
    """A series or iteration failed to converge within its configured budget."""


class TruncationBoundError(SmtdeError, RuntimeError):
    """A coefficient beyond the configured truncation bound was requested."""


class EnsembleError(SmtdeError, RuntimeError):
    """Too many sample paths were flagged as blown up to trust the ensemble."""


class DegenerateExperimentError(SmtdeError, RuntimeError):
    """The experiment setup makes the measured quantity identically trivial."""
