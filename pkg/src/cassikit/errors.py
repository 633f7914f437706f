"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto stable exit codes: usage errors exit 1, data and
format errors exit 2, numeric failures exit 3.
"""


class CassikitError(Exception):
    """Base class for all toolkit errors."""


class UsageError(CassikitError):
    """Caller misuse: bad arguments, wrong call sequence."""


class ShapeError(CassikitError):
    """Dimension or extent mismatch between operands."""


class NumericError(CassikitError):
    """NaN/Inf encountered or a numeric check failed."""


class DataFormatError(CassikitError):
    """Malformed file: bad magic, truncated payload, wrong dtype."""


class ConfigError(DataFormatError):
    """Configuration file violates the documented schema."""
