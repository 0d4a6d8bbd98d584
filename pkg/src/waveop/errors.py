"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: config errors exit 1, numerical failures
exit 2, I/O problems exit 3.
"""


class WaveopError(Exception):
    """Base class for package-specific failures."""


class ConfigError(WaveopError):
    """Invalid configuration file or field."""


class NumericsError(WaveopError):
    """Numerical failure: NaN loss, instability, or solution blow-up."""


class StabilityError(NumericsError):
    """A stability precondition was violated; bounds are never silently adjusted."""


class BlowupError(NumericsError):
    """Solution magnitude exceeded the abort threshold."""
