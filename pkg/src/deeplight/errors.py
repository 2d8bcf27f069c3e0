"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: InputError (and plain I/O failures)
exit 1, ConfigurationError exits 2.
"""


class DeepLightError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DeepLightError):
    """Invalid configuration value, shape mismatch or bad parameter wiring."""


class InputError(DeepLightError):
    """Well-configured call applied to unusable input data."""


class NotDecomposedError(DeepLightError):
    """Relevance decomposition refused (sample was not classified correctly)."""
