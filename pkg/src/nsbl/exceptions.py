"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration problems -> 2,
missing or stale pipeline artifacts -> 3, numerical failures -> 4.
"""


class NsblError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(NsblError, ValueError):
    """An argument violates a documented precondition."""


class SingularityError(NsblError, ValueError):
    """A matrix that must be positive definite is (numerically) singular."""

    def __init__(self, message, dimension=None, kernel=None):
        super().__init__(message)
        self.dimension = dimension
        self.kernel = kernel


class DivergenceError(NsblError, RuntimeError):
    """A simulated trajectory left the admissible state region."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class EvaluationError(NsblError, RuntimeError):
    """A likelihood / filter evaluation produced non-finite quantities."""


class ChainDiagnosticError(NsblError, RuntimeError):
    """An MCMC chain failed a health check (e.g. zero acceptance)."""


class OptimizationError(NsblError, RuntimeError):
    """Every start of a multistart optimization failed."""


class ConfigError(NsblError, ValueError):
    """A configuration document violates the schema."""


class MissingArtifactError(NsblError, RuntimeError):
    """A pipeline stage requires an artifact that is absent or hash-stale."""
