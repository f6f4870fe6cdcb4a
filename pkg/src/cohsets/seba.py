"""Sparse eigenbasis rotation: one nonnegative-leaning vector per feature.

Rotates an orthonormalized eigenvector block U so that soft-thresholding
the rotated columns yields sparse vectors that still approximately span
the input space.  The rotation update is the orthogonal-Procrustes polar
factor of S^T U; iteration stops when the rotation stops changing.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError

logger = logging.getLogger(__name__)

NEGATIVE_FLAG_LEVEL = -0.2
SUPPORT_LEVEL = 0.01


@dataclass(frozen=True)
class SebaBasis:
    """Sparse feature basis over global indices.

    ``columns[:, k]`` is feature k's likelihood vector, scaled so its
    maximum entry is 1; columns are ordered by descending L1 norm.
    """

    columns: np.ndarray
    mu: float
    iterations: int
    rotation_change: float
    converged: bool
    span_residual: float

    @property
    def n_features(self) -> int:
        return self.columns.shape[1]

    def support_fractions(self) -> np.ndarray:
        """Per-column fraction of entries above the support level."""
        return (self.columns > SUPPORT_LEVEL).mean(axis=0)

    def negative_flags(self) -> np.ndarray:
        """Per-column count of entries below the diagnostic floor."""
        return (self.columns < NEGATIVE_FLAG_LEVEL).sum(axis=0)


def soft_threshold(z: np.ndarray, mu: float) -> np.ndarray:
    return np.sign(z) * np.maximum(np.abs(z) - mu, 0.0)


def _orthonormalize(U: np.ndarray) -> np.ndarray:
    Q, R = np.linalg.qr(U)
    if np.any(np.abs(np.diag(R)) < 1e-12 * max(1.0, np.abs(R).max())):
        raise ValidationError("input columns are not linearly independent")
    return Q

def _polar_factor(C: np.ndarray) -> np.ndarray:
    W, _, Vt = np.linalg.svd(C)
    return W @ Vt


def _run_iteration(Q: np.ndarray, R0: np.ndarray, mu: float, tol: float,
                   max_iter: int):
    """One SEBA fixed-point run from initial rotation R0."""
    R = R0
    delta = np.inf
    iterations = 0
    converged = False
    while iterations < max_iter:
        S = soft_threshold(Q @ R.T, mu)
        norms = np.linalg.norm(S, axis=0)
        if np.any(norms == 0.0):
            dead = int(np.nonzero(norms == 0.0)[0][0])
            raise NumericalError(
                f"soft threshold mu={mu:.4g} annihilated column {dead}; "
                "use a smaller mu"
            )
        S = S / norms
        R_new = _polar_factor(S.T @ Q)
        delta = float(np.linalg.norm(R_new - R))
        R = R_new
        iterations += 1
        if delta <= tol:
            converged = True
            break
    S = soft_threshold(Q @ R.T, mu)
    norms = np.linalg.norm(S, axis=0)
    if np.any(norms == 0.0):
        dead = int(np.nonzero(norms == 0.0)[0][0])
        raise NumericalError(
            f"soft threshold mu={mu:.4g} annihilated column {dead}; "
            "use a smaller mu"
        )
    S = S / norms
    return S, iterations, delta, converged


def _postprocess(Q: np.ndarray, S_unit: np.ndarray):
    """Sign-fix, max-scale, order by L1; also span residual on unit columns."""
    span_residual = float(
        np.linalg.norm(Q @ (Q.T @ S_unit) - S_unit) / np.linalg.norm(S_unit)
    )
    S = S_unit.copy()
    for j in range(S.shape[1]):
        col = S[:, j]
        imax = int(np.argmax(np.abs(col)))
        if col[imax] < 0:
            col = -col
        peak = col.max()
        if peak <= 0:
            raise NumericalError(f"column {j} has no positive entries after sign fix")
        S[:, j] = col / peak
    order = np.argsort(-np.linalg.norm(S, ord=1, axis=0), kind="stable")
    return S[:, order], span_residual


def seba_rotate(U: np.ndarray, mu: float | None = None, tol: float = 1e-12,
                max_iter: int = 1000, restarts: int = 0,
                seed: int | None = None, free_indices=None,
                dim: int | None = None) -> SebaBasis:
    """Sparsify an n x r eigenvector block into per-feature columns.

    Parameters
    ----------
    U : ndarray, shape (n, r)
        Eigenvector coefficients on the free indices, linearly independent
        columns, n >= r.
    mu : float, optional
        Soft-threshold penalty; default 0.99/sqrt(n).
    tol, max_iter :
        Stop when the rotation update has Frobenius change <= tol, or
        after max_iter sheets; non-convergence is reported via the
        ``converged`` flag, not an exception.
    restarts : int
        Extra runs from seeded random orthogonal initializations; the run
        with the smallest total L1 norm wins (the deterministic identity
        start is always included and wins ties).
    free_indices, dim :
        When given, columns are scattered into a length-``dim`` global
        vector with zeros off the free set.
    """
    U = np.asarray(U, dtype=float)
    if U.ndim != 2:
        raise ValidationError("U must be a 2-D array")
    n, r = U.shape
    if r < 1 or n < r:
        raise ValidationError(f"need n >= r >= 1, got shape {U.shape}")
    if mu is None:
        mu = 0.99 / np.sqrt(n)
    if mu <= 0:
        raise ValidationError(f"mu must be positive, got {mu}")

    Q = _orthonormalize(U)

    inits = [np.eye(r)]
    if restarts > 0:
        rng = np.random.default_rng(seed)
        for _ in range(restarts):
            G = rng.standard_normal((r, r))
            Qr, Rr = np.linalg.qr(G)
            inits.append(Qr * np.sign(np.diag(Rr)))

    best = None
    for R0 in inits:
        S_unit, iterations, delta, converged = _run_iteration(Q, R0, mu, tol, max_iter)
        S, span_residual = _postprocess(Q, S_unit)
        total_l1 = float(np.abs(S).sum())
        if best is None or total_l1 < best[0] - 1e-12:
            best = (total_l1, S, iterations, delta, converged, span_residual)

    _, S, iterations, delta, converged, span_residual = best
    if not converged:
        logger.warning(
            "rotation not converged after %d iterations (change %.3e)",
            iterations, delta,
        )
    n_neg = int((S < NEGATIVE_FLAG_LEVEL).sum())
    if n_neg:
        logger.warning("%d entries below %.2f across columns", n_neg,
                       NEGATIVE_FLAG_LEVEL)

    if free_indices is not None:
        if dim is None:
            raise ValidationError("dim is required when free_indices is given")
        full = np.zeros((dim, r))
        full[np.asarray(free_indices, dtype=int), :] = S
        S = full

    return SebaBasis(columns=S, mu=float(mu), iterations=iterations,
                     rotation_change=delta, converged=converged,
                     span_residual=span_residual)


def max_combine(basis: SebaBasis) -> np.ndarray:
    """Entry-wise maximum across feature columns."""
    if basis.n_features < 1:
        raise ValidationError("basis has no columns")
    return basis.columns.max(axis=1)


def write_seba_csv(basis: SebaBasis, path, min_abs: float = 1e-12) -> None:
    """Write `k,global_index,value` rows for entries with |value| > min_abs."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "global_index", "value"])
        for j in range(basis.n_features):
            col = basis.columns[:, j]
            for g in np.nonzero(np.abs(col) > min_abs)[0]:
                writer.writerow([j + 1, int(g), repr(float(col[g]))])


def read_seba_columns(path, n_global: int) -> np.ndarray:
    """Read back the columns written by write_seba_csv."""
    cells = []
    n_feat = 0
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if not row:
                continue
            kk, g, v = int(row[0]), int(row[1]), float(row[2])
            n_feat = max(n_feat, kk)
            cells.append((kk - 1, g, v))
    if n_feat == 0:
        raise ValidationError(f"no feature entries in {path}")
    cols = np.zeros((n_global, n_feat))
    for j, g, v in cells:
        cols[g, j] = v
    return cols
