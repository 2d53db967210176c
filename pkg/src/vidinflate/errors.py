"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class VidInflateError(Exception):
    exit_code = 1


class ConfigError(VidInflateError, ValueError):
    exit_code = 1


class ShapeError(VidInflateError, ValueError):
    exit_code = 2


class ParameterError(VidInflateError, KeyError):
    exit_code = 2

    def __str__(self):
        return Exception.__str__(self)


class InflationError(VidInflateError, ValueError):
    exit_code = 2

    def __init__(self, message, names=()):
        self.names = list(names)
        if self.names:
            message = f"{message}: {', '.join(self.names)}"
        super().__init__(message)


class DataError(VidInflateError, ValueError):
    exit_code = 2


class FormatError(VidInflateError, ValueError):
    exit_code = 2


class MetricError(VidInflateError, ValueError):
    exit_code = 2


class NumericError(VidInflateError, ArithmeticError):
    exit_code = 3


class TimestepError(VidInflateError, IndexError):
    exit_code = 2
