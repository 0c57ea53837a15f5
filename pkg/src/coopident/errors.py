"""Exception types raised across the package."""


class CoopIdentError(Exception):
    """Base class for all package errors."""


class ConstraintViolation(CoopIdentError, ValueError):
    """An input does not satisfy a required algebraic constraint (e.g. unit norm)."""


class IntegrationError(CoopIdentError, ArithmeticError):
    """The rigid body integrator produced a non-finite derivative."""


class DegenerateForce(CoopIdentError, ValueError):
    """The total force is too small to define an orthogonal complement."""


class NumericalError(CoopIdentError, ArithmeticError):
    """A factorization or eigensolve failed or lost definiteness."""


class ConsensusError(CoopIdentError, RuntimeError):
    """Consensus did not reach tolerance, or the network is malformed."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConfigError(CoopIdentError, ValueError):
    """A scenario configuration failed validation."""


class PhaseOrderError(CoopIdentError, RuntimeError):
    """Phase 2 was requested without converged phase-1 pose estimates."""
