"""Exception hierarchy for skelfit."""


class SkelfitError(Exception):
    """Base class for all skelfit errors."""


class DegenerateRotation(SkelfitError, ValueError):
    """A rotation parameter cannot be turned into a rotation (zero quaternion)."""


class ModelError(SkelfitError, ValueError):
    """A body or skeleton model, or a state, is malformed."""


class NumericalError(SkelfitError, FloatingPointError):
    """Non-finite values appeared during optimization.

    The partial energy trace is attached as ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = [] if trace is None else list(trace)


class UnderconstrainedError(SkelfitError, ValueError):
    """Too few confident observations to fit."""


class NotConverged(SkelfitError, RuntimeError):
    """A fit did not converge where convergence is required."""


class GenerationError(SkelfitError, RuntimeError):
    """Synthetic scene generation failed its self-check."""


class SceneError(SkelfitError, ValueError):
    """A scene lacks data required by the requested operation."""


class MetricError(SkelfitError, ValueError):
    """Inputs to a metric have mismatched shape or topology."""
