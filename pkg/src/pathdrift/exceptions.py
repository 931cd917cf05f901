"""Exception hierarchy shared by every module."""


class PathDriftError(Exception):
    """Base class for all errors raised by pathdrift."""


class DomainError(PathDriftError, ValueError):
    """An argument lies outside the domain of an operation."""


class NumericError(PathDriftError, ArithmeticError):
    """A simulation produced a non-finite or singular quantity.

    ``step`` and ``state`` are filled in when the failure can be localised.
    """

    def __init__(self, message, step=None, state=None):
        super().__init__(message)
        self.step = step
        self.state = state


class UnsupportedMethodError(PathDriftError, NotImplementedError):
    """The requested estimator does not apply to the given model."""


class ConfigError(PathDriftError, ValueError):
    """A configuration file is malformed; ``field`` names the offending key."""

    def __init__(self, message, field=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.field = field
        self.line = line
