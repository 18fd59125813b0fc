"""Exception hierarchy. Each class maps to one CLI exit code."""


class NrcesError(Exception):
    exit_code = 1


class InvalidInputError(NrcesError, ValueError):
    """Malformed data handed to a kernel or pipeline stage."""

    exit_code = 2


class ConfigError(NrcesError, ValueError):
    """A hyperparameter or command-line option is out of range."""

    exit_code = 2


class SpanTooLongError(InvalidInputError):
    pass


class ConllParseError(InvalidInputError):
    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class NumericError(NrcesError, ArithmeticError):
    """Non-finite value reached the loss or the parameters."""

    exit_code = 4
