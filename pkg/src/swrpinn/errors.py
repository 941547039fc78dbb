"""Exception types shared across the package."""


class UsageError(ValueError):
    """An operation was called outside its contract."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class NumericError(ArithmeticError):
    """A computation produced or received a non-finite value."""

    def __init__(self, op: str, message: str = ""):
        self.op = op
        super().__init__(f"{op}: {message}" if message else op)
