"""Exception taxonomy shared across the package."""


class SemixError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(SemixError):
    """Invalid, unknown, or out-of-range configuration."""


class DataError(SemixError):
    """Unusable input data: missing files, malformed rows, bad labels."""
