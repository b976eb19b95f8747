"""Shared exception hierarchy.

Every error raised by this package derives from BimodalAuthError so
callers (the CLI in particular) can catch one base class and still
report a specific failure.
"""


class BimodalAuthError(Exception):
    """Base class for all errors raised by bimodalauth."""


class FormatError(BimodalAuthError):
    """Malformed input data (file parsing, binary records, wire payloads)."""


class ConfigurationError(BimodalAuthError):
    """A parameter is outside its documented domain."""


class InsufficientDataError(BimodalAuthError):
    """Too few samples to carry out the requested operation."""
