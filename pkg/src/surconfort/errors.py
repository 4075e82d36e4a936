"""Exception types shared across the package.

The CLI maps these onto exit codes: argument/config problems -> 2,
data problems -> 3, numeric failures -> 4.
"""


class ConfigError(ValueError):
    """Bad CLI flag, config file, or function argument."""


class DataError(RuntimeError):
    """Missing, malformed, or inconsistent input data."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to converge within its budget."""
