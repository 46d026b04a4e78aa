"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage / invalid arguments -> 2,
data-format problems -> 3, numerical failures -> 4.
"""


class UnmixsrError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgumentError(UnmixsrError, ValueError):
    """An argument violates an operation's precondition (shape, range, ...)."""


class DegenerateInputError(UnmixsrError, ValueError):
    """Input is structurally valid but degenerate (e.g. an all-zero cube)."""


class DataFormatError(UnmixsrError):
    """A serialized artifact (raster container, checkpoint) is malformed."""


class ConfigError(InvalidArgumentError):
    """A configuration file fails schema validation."""


class NumericalError(UnmixsrError):
    """A numerical failure during optimization (non-finite loss or weights)."""
