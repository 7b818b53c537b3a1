"""Exception hierarchy shared by every validation level."""


class ValidationError(Exception):
    """Base class for all errors raised by mtsvalid."""


class EmptyInputError(ValidationError):
    pass


class InvalidArgumentError(ValidationError, ValueError):
    pass


class ShapeError(ValidationError, ValueError):
    pass


class SchemaError(ValidationError, KeyError):
    def __str__(self) -> str:
        # KeyError quotes its message; keep it readable.
        return str(self.args[0]) if self.args else ""


class DegenerateChannelError(ValidationError, ValueError):
    def __init__(self, sensor: str, message: str | None = None):
        self.sensor = sensor
        super().__init__(message or f"sensor {sensor!r} has zero range in training data")


class InstabilityError(ValidationError, ValueError):
    pass


class DivergenceError(ValidationError, ArithmeticError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training loss became non-finite at epoch {epoch}")


class ConditioningError(ValidationError, ArithmeticError):
    def __init__(self, source: int, target: int):
        self.pair = (source, target)
        super().__init__(f"singular lagged regression for pair {source}->{target}")


class AlignmentError(ValidationError, ValueError):
    pass


class FormatError(ValidationError, ValueError):
    pass


class ConfigurationError(ValidationError, ValueError):
    pass


class ReportWriteError(ValidationError, OSError):
    def __init__(self, path, reason: str):
        self.path = path
        super().__init__(f"cannot write {path}: {reason}")
