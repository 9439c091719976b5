"""Exception hierarchy shared by every module.

The CLI maps each family onto a process exit code.
"""


class StaggerError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(StaggerError, ValueError):
    pass


class DimensionError(StaggerError, ValueError):
    pass


class DomainError(StaggerError, ValueError):
    pass


class DataError(StaggerError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class NumericError(StaggerError, ArithmeticError):
    pass


class ModelFormatError(DataError):
    pass
