"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, NumericError -> 3,
ResolutionError -> 4.  Plain ValueError is used for ordinary precondition
violations (empty sets, out-of-range arguments).
"""


class SobextError(Exception):
    """Base class for package-specific failures."""


class ConfigError(SobextError):
    """Invalid run configuration (unknown keys, bad schema, bad values)."""


class NumericError(SobextError):
    """A numeric routine failed to converge or produced invalid output."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


class ResolutionError(SobextError):
    """Geometry cannot be resolved at the requested grid spacing, or a grid
    exceeds the configured point budget."""
