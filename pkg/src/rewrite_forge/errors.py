"""Shared exception hierarchy.

The CLI maps ``ConfigError`` (and its subclasses) to exit code 1 and every
other ``ForgeError`` to exit code 2. Modules define their own specific
errors on top of these bases.
"""


class ForgeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ForgeError):
    """Invalid configuration, arguments, or input schema."""


class ValidationError(ConfigError):
    """Input data violates a documented contract."""
