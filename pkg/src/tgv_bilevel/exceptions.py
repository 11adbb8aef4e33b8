class ConvergenceError(RuntimeError):
    """A nonlinear solver stopped before meeting its tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class SolverError(RuntimeError):
    """A linear solve failed (singular or non-finite result)."""
