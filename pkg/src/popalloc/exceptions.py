"""Exception types raised by popalloc.

The command-line front end maps these onto exit codes, so library code raises
the most specific class that applies.
"""


class PopallocError(Exception):
    """Base class for all package errors."""


class DomainError(PopallocError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DataError(PopallocError, ValueError):
    """Observed data are malformed or inconsistent with a schema."""


class FitError(PopallocError, RuntimeError):
    """A nuisance model could not be fitted."""


class ConfigError(PopallocError, ValueError):
    """A run configuration is invalid."""
