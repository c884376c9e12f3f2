"""Exception hierarchy. CLI exit codes hang off the class attribute."""


class AdastError(Exception):
    exit_code = 1


class ShapeError(AdastError, ValueError):
    """Incompatible tensor shapes or ranks."""


class GeometryError(ShapeError):
    """Layer geometry yields an empty output (kernel longer than input, ...)."""


class NumericError(AdastError, ArithmeticError):
    exit_code = 4


class LabelError(AdastError, ValueError):
    pass


class StatisticsError(AdastError, ValueError):
    pass


class GraphError(AdastError, RuntimeError):
    pass


class FormatError(AdastError, ValueError):
    """Malformed epoch or checkpoint file."""

    exit_code = 3

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SpecError(AdastError, ValueError):
    exit_code = 2


class SplitError(AdastError, ValueError):
    exit_code = 3


class ConfigError(AdastError, ValueError):
    exit_code = 2


class CompatibilityError(AdastError, ValueError):
    exit_code = 3
