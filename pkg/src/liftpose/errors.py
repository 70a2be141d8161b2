"""Exception hierarchy shared across the package."""


class LiftPoseError(Exception):
    """Base class for all package errors."""


class ParseError(LiftPoseError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class ValidationError(LiftPoseError):
    pass


class ConfigError(LiftPoseError):
    pass


class FitError(LiftPoseError):
    pass


class IllConditionedError(FitError):
    pass


class ShapeError(LiftPoseError, ValueError):
    pass


class DegeneratePoseError(LiftPoseError):
    pass


class UnsupportedWindowError(LiftPoseError, ValueError):
    pass


class CheckpointError(LiftPoseError):
    pass


class NumericalError(LiftPoseError, ArithmeticError):
    pass


class EmptyInputError(LiftPoseError):
    pass
