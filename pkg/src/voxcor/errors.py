"""Error types shared across the package.

The CLI maps these onto process exit codes: parameter/validation problems
exit 2, numerical failures exit 3, file-format problems exit 4.
"""


class VoxcorError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ParameterError(VoxcorError):
    """Invalid argument, shape mismatch, or unsatisfiable configuration."""

    exit_code = 2


class NumericalError(VoxcorError):
    """Data-dependent numerical failure (rank deficiency, degenerate weights)."""

    exit_code = 3


class FormatError(VoxcorError):
    """Malformed or truncated container file."""

    exit_code = 4
