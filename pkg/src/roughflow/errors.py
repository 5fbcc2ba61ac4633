"""Exception types shared across the package."""


class CapabilityError(RuntimeError):
    """An operation needs a derivative order or feature the object does not provide."""


class CoverageError(RuntimeError):
    """Evaluation requested outside the synthesized working box.

    Carries the margin (per axis) that would have been required.
    """

    def __init__(self, message, required_margin=None):
        super().__init__(message)
        self.required_margin = required_margin


class EvaluationError(RuntimeError):
    """A field evaluation produced non-finite values."""


class DivergenceError(RuntimeError):
    """A flow step produced a non-finite point; carries the failing (s, t, x)."""

    def __init__(self, message, s=None, t=None, x=None):
        super().__init__(message)
        self.s, self.t, self.x = s, t, x


class ToleranceError(RuntimeError):
    """A quadrature or norm estimate failed to converge under refinement."""


class ConstraintError(ValueError):
    """A parameter violates an admissibility constraint; names the inequality."""

    def __init__(self, message, constraint=None):
        super().__init__(message)
        self.constraint = constraint or message
