"""Typed exceptions raised across the package.

Every numerical routine refuses to return NaN or silently degraded output;
instead it raises one of the classes below, carrying whatever diagnostic
information is available at the failure point.
"""


class SpiralLabError(Exception):
    """Base class for all package errors."""


class DomainError(SpiralLabError, ValueError):
    """Argument outside the mathematical domain of a function."""


class RangeError(SpiralLabError, OverflowError):
    """Result would overflow double precision."""


class ParameterError(SpiralLabError, ValueError):
    """Invalid model or kernel parameters."""


class BreakdownError(SpiralLabError):
    """Effective diffusion eta - eps^2 D is not positive."""

    def __init__(self, message, d_real=None):
        super().__init__(message)
        self.d_real = d_real


class ShapeError(SpiralLabError, ValueError):
    """Array shapes or grids are inconsistent."""


class PreconditionError(SpiralLabError, ValueError):
    """Input violates a documented precondition."""


class SolvabilityError(SpiralLabError):
    """A Fredholm solvability condition fails."""

    def __init__(self, message, integral=None):
        super().__init__(message)
        self.integral = integral


class AccuracyError(SpiralLabError):
    """Quadrature or discretization error estimate exceeds tolerance."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class ConvergenceError(SpiralLabError):
    """Iteration did not converge."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class InvariantError(SpiralLabError):
    """A computed solution violates a qualitative invariant."""


class ResolutionError(SpiralLabError):
    """Grid too coarse to resolve a feature."""


class BracketError(SpiralLabError):
    """Root could not be bracketed."""

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class UnderflowError(SpiralLabError):
    """Result is below the representable floor."""


class PoleError(SpiralLabError):
    """Solution develops a pole (division by a vanishing quantity)."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class SingularSolveError(SpiralLabError):
    """Linear system is singular or numerically singular."""


class StabilityError(SpiralLabError):
    """Time integration produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class MeasurementError(SpiralLabError):
    """A diagnostic measurement is undefined for the given data."""


class AliasingError(MeasurementError):
    """Snapshot spacing too coarse for the measured frequency."""


class ConfigError(SpiralLabError, ValueError):
    """Configuration document is invalid."""


class SnapshotError(SpiralLabError):
    """Snapshot file is corrupt or has an unsupported format."""


class JoinError(SpiralLabError):
    """Simulation and asymptotic summaries cannot be joined."""
