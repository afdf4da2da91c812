"""Exception types shared across the package.

The CLI maps these onto process exit codes (see cli.main).
"""


class ConfigurationError(ValueError):
    """Invalid parameters or experiment configuration (exit code 2)."""


class DataFormatError(RuntimeError):
    """Malformed files, bad headers, or mismatched dimensions (exit code 3)."""


class NumericalError(ArithmeticError):
    """Numerical domain failure, e.g. an indefinite covariance (exit code 4)."""
