"""Exception hierarchy shared by all pipeline stages.

The CLI maps these onto process exit codes: ValidationError -> 2,
NumericalError -> 3, ArtifactError -> 4.
"""


class CohsetsError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(CohsetsError):
    """Bad configuration, arguments, or malformed input data."""

    exit_code = 2


class NumericalError(CohsetsError):
    """Degenerate geometry, non-convergence, or indefinite systems."""

    exit_code = 3


class ArtifactError(CohsetsError):
    """Missing or unreadable/unwritable run artifacts."""

    exit_code = 4
