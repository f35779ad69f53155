"""Exception types raised across the package."""


class DegenerateInputError(ValueError):
    """Input is well-formed but statistically degenerate (e.g. constant)."""


class NumericError(FloatingPointError):
    """A non-finite value appeared where a finite one is required.

    ``path`` names the offending parameter or quantity when known.
    """

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class ParseError(ValueError):
    """A text file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(ValueError):
    """A file parsed but violates a structural constraint."""
