"""Shared exception types."""


class GuardError(ValueError):
    """A size or stability guard was violated (combinatorial blow-up, CFL, ...)."""


class ConfigError(ValueError):
    """A run configuration is malformed or inconsistent."""
