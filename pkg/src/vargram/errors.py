class VargramError(Exception):
    """Base class for all errors raised by vargram."""


class ConfigError(VargramError):
    """Invalid model or experiment configuration.

    ``path`` names the offending field (e.g. ``"reactions[3].rate"``) when known.
    """

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class IntegrationError(VargramError):
    """The implicit stage solve failed or the state left the finite range."""

    def __init__(self, message, residual_norm=None, step_index=None):
        self.residual_norm = residual_norm
        self.step_index = step_index
        super().__init__(message)


class NumericalError(VargramError):
    """A numerical quantity (determinant, Gramian, ...) is degenerate."""


class CombinatorialBudgetError(VargramError):
    """Exhaustive enumeration would exceed the allowed number of subsets."""
