"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2 (usage), FormatError /
ConsistencyError -> 3 (data), FitError -> 4 (numeric failure).
"""


class ClothkitError(Exception):
    pass


class FormatError(ClothkitError):
    """Malformed file content (PGM header, manifest, serialized artifacts)."""


class ConsistencyError(ClothkitError):
    """Inputs that are individually fine but disagree with each other."""


class ConfigError(ClothkitError):
    """Invalid parameter or precondition violation."""


class DomainError(ClothkitError):
    """Evaluation outside a surface's parametric domain."""


class FitError(ClothkitError):
    """Numerical failure: rank-deficient fit, non-converged optimisation."""
