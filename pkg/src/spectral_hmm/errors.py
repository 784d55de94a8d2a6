"""Exception hierarchy shared by the library and the CLI."""


class SpectralHMMError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(SpectralHMMError, ValueError):
    exit_code = 2


class DataError(SpectralHMMError, ValueError):
    exit_code = 3


class ParseError(DataError):
    pass


class FormatError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class NumericError(SpectralHMMError, ArithmeticError):
    exit_code = 4


class InvariantError(SpectralHMMError, ValueError):
    exit_code = 4


class ImproperPriorError(ConfigError):
    pass


class TraceFormatError(DataError):
    pass
