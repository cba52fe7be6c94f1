"""Error types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
unsupported/violated preconditions exit 3, statistical check failures exit 4.
"""


class ConfigurationError(ValueError):
    """A config value is missing, malformed, or inconsistent."""


class PreconditionError(RuntimeError):
    """An operation was invoked on a configuration it does not support."""
