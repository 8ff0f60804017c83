"""Exception types shared across the solver.

The CLI maps these onto exit codes: configuration problems exit with 2,
solver failures (linear solves, nonlinear iterations, conservation
parameters) with 3.
"""


class ConfigurationError(ValueError):
    """Invalid grid/experiment configuration."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class DegenerateInputError(ValueError):
    """Input field is degenerate (zero mass, all-zero tensor, ...)."""


class PositivityError(RuntimeError):
    """Operation requires a strictly positive distribution."""


class LinearSolverError(RuntimeError):
    """Linear solve failed to meet its residual contract."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConvergenceError(RuntimeError):
    """Nonlinear (Anderson/Picard) iteration exhausted its budget."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class ConservationParameterError(RuntimeError):
    """The gamma/eps_par conservation solve is degenerate."""
