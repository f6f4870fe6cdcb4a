"""Finite-time coherent set detection from sparse, gappy float trajectories.

The pipeline: bin surfacing records into monthly trajectories, mesh each
month's reporting positions together with fixed coastline points,
assemble per-month P1 stiffness/mass matrices, average them over time,
solve the constrained generalized eigenproblem, sparsify the leading
eigenvectors into per-feature likelihood vectors, and extract optimal
set boundaries by minimizing the time-averaged boundary-to-area ratio
over superlevel-set thresholds.
"""

__version__ = "0.1.0"

from .errors import (ArtifactError, CohsetsError, NumericalError,
                     ValidationError)

__all__ = [
    "ArtifactError",
    "CohsetsError",
    "NumericalError",
    "ValidationError",
    "__version__",
]
