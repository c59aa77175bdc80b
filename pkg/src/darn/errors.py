"""Exception types shared across the package."""


class DarnError(Exception):
    pass


class InvalidInputError(DarnError, ValueError):
    """Non-finite, empty or mis-shaped input."""


class DegeneratePointError(DarnError, ArithmeticError):
    """Jacobian requested where the projection's support is numerically degenerate."""


class StaleCacheError(DarnError, RuntimeError):
    """A forward cache was used after the parameters it was built from changed."""


class DivergenceError(DarnError, FloatingPointError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, domain=None):
        super().__init__(message)
        self.domain = domain


class ConfigError(DarnError, ValueError):
    pass


class ParseError(DarnError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
