"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit 1,
numeric faults exit 2.
"""


class FieldsacError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FieldsacError):
    """Bad dimensions, malformed inputs, or invalid configuration keys."""


class NumericFault(FieldsacError):
    """A NaN or Inf showed up where only finite values are allowed."""


class ContractViolation(FieldsacError):
    """API misuse: stale tape, stepping a finished episode, and similar."""


class NotReadyError(FieldsacError):
    """The replay store does not yet hold enough data to serve a batch."""
