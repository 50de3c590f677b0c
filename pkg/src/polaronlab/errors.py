"""Exception types shared across the package.

Each maps to a CLI exit code, see `polaronlab.cli`.
"""


class ConfigError(ValueError):
    """Invalid run configuration or command arguments (exit code 2)."""


class DimensionCapError(ConfigError):
    """A requested grid or Fock basis would exceed the configured size cap."""


class SolverError(RuntimeError):
    """An eigenvalue or linear solver failed to converge (exit code 3)."""


class IndefiniteOperatorError(SolverError):
    """A restricted operator expected to be positive definite is not.

    This signals that a spectral-gap assumption fails on the instance at
    hand (typically: coupling too large for the truncation level), so a
    resolvent the reduction needs does not exist.
    """


class CacheCorruptionError(RuntimeError):
    """A cached artifact failed its content-hash check (exit code 4)."""
