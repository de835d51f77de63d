"""Error taxonomy shared across the package.

Three classes cover everything user-facing: bad configuration, bad or
inconsistent data, and unreadable files.  The CLI maps ConfigError to exit
code 1 and DataError (including FormatError) to exit code 2.
"""


class RailsError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RailsError):
    """A configuration value is missing, malformed, or out of range."""


class DataError(RailsError):
    """Input data violates an invariant (shape, range, labels, counts)."""


class FormatError(DataError):
    """A serialized file is truncated, has a bad magic, or bad field values."""
