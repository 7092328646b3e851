"""Exception types shared across the package."""


class NumericalRangeError(ArithmeticError):
    """A filtering or integration step produced non-finite values."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    """Misuse of a computation graph (missing inputs, backward before forward...)."""


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted path of the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class DatasetFormatError(ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingDivergedError(ArithmeticError):
    def __init__(self, iteration, message="non-finite loss"):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
