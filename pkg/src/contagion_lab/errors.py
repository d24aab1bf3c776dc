"""Error taxonomy shared across the library.

Validation problems raise ValueError (or ConfigError for scenario files);
numerical failures raise NumericalError.  The command line maps these to
distinct exit codes.
"""


class ConfigError(ValueError):
    """A scenario configuration is malformed; the message names the field."""


class NumericalError(RuntimeError):
    """A numerical contract was violated (instability, non-convergence,
    non-finite values)."""
