"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class DegenerateConfigurationError(ValueError):
    """Raised when a point configuration does not determine a unique solution."""


class ParseError(ValueError):
    """Malformed dataset, prediction or checkpoint file.

    The message carries the file line (or record) that failed to parse.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingDiverged(RuntimeError):
    """A loss became non-finite during optimisation."""
