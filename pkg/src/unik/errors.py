"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """A linear-algebra step failed (singular or non-finite system)."""


class ConfigError(ValueError):
    """An experiment configuration is invalid or cannot be parsed."""
