class ActoregError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(ActoregError, ValueError):
    pass


class NumericError(ActoregError, ArithmeticError):
    pass


class ContractError(ActoregError, ValueError):
    pass


class ConfigError(ActoregError, ValueError):
    """Invalid configuration; ``path`` names the offending field when known."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(f"{path}: {message}" if path else message)
        self.message = message
        self.path = path


class FormatError(ActoregError, ValueError):
    pass
