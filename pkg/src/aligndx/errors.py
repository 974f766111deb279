"""Exception types shared across the package.

``DataError`` covers everything wrong with input files or label codes;
``NumericError`` covers degenerate numerics (zero vectors, collapsed
covariance, non-finite losses).  The CLI maps them to distinct exit codes.
"""


class DataError(Exception):
    """Invalid manifest, label code, or file content."""


class NumericError(Exception):
    """Degenerate numeric state (zero-norm vector, singular covariance, ...)."""
