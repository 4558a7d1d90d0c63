"""Exception types shared across the package."""


class DivergenceError(FloatingPointError):
    """A numerical procedure produced non-finite values.

    ``where`` names the loop counter at which it happened (round, iteration).
    """

    def __init__(self, message, where=None):
        super().__init__(message if where is None else f"{message} (at {where})")
        self.where = where


class ConfigError(ValueError):
    """Invalid experiment or attack configuration."""
