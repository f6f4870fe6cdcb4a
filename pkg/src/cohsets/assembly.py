"""P1 stiffness/mass assembly per month and time-averaging with constraints.

Element integrals are closed-form for linear hat functions: gradients are
piecewise constant, so the 3x3 stiffness block is ``area * (grad_a . grad_b)``
and the mass block is ``area/12 * (1 + delta_ab)``.  Per-month matrices are
assembled straight into the shared (I+C)-dimensional coefficient space
(global indices absent from the month's mesh simply stay zero), then
averaged over the T months.  Dirichlet conditions are enforced by
restriction to the free index set rather than by penalties.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import NumericalError, ValidationError
from .meshing import TriMesh, signed_area

logger = logging.getLogger(__name__)

# matches the degenerate-triangle floor used at meshing time
MIN_AREA = 1e-12

# dense symmetric-indefinite factorization is cheap up to this size; above
# it the definiteness check falls back to diagonal positivity
_DENSE_SPD_LIMIT = 4000


@dataclass(frozen=True)
class TimeAveragedSystem:
    """Averaged stiffness/mass pair with Dirichlet constraints applied.

    ``D_bar`` and ``M_bar`` live on the full I+C coefficient space;
    ``free_indices`` lists the global indices that remain unknowns after
    removing coastline points and never-meshed floats.
    """

    D_bar: sp.csr_matrix
    M_bar: sp.csr_matrix
    free_indices: np.ndarray
    T: int

    @property
    def n_global(self) -> int:
        return self.D_bar.shape[0]

    @property
    def n_free(self) -> int:
        return len(self.free_indices)

    def restricted(self) -> tuple:
        """(D, M) restricted to the free index block, CSC for factorization."""
        idx = self.free_indices
        D = self.D_bar[idx][:, idx].tocsc()
        M = self.M_bar[idx][:, idx].tocsc()
        return D, M

    def embed(self, u_free: np.ndarray) -> np.ndarray:
        """Scatter a free-index vector into the full space, zeros elsewhere."""
        full = np.zeros(self.n_global)
        full[self.free_indices] = u_free
        return full


def local_stiffness(tri: np.ndarray) -> np.ndarray:
    """3x3 gradient-product element matrix for one triangle.

    Rows sum to zero (constants have zero gradient) and the matrix is
    invariant under uniform scaling of the triangle.
    """
    tri = np.asarray(tri, dtype=float)
    area = float(signed_area(tri[None, :, :])[0])
    if abs(area) <= MIN_AREA:
        raise NumericalError(f"degenerate triangle, area {area:.3e}")
    # edge vector opposite each vertex; grad(phi_a) = rot90(edge_a) / (2A)
    edges = np.array([tri[2] - tri[1], tri[0] - tri[2], tri[1] - tri[0]])
    return (edges @ edges.T) / (4.0 * abs(area))


def local_mass(tri: np.ndarray) -> np.ndarray:
    """3x3 hat-product element matrix: area/12 off-diagonal, area/6 diagonal."""
    tri = np.asarray(tri, dtype=float)
    area = float(signed_area(tri[None, :, :])[0])
    if abs(area) <= MIN_AREA:
        raise NumericalError(f"degenerate triangle, area {area:.3e}")
    return (abs(area) / 12.0) * (np.ones((3, 3)) + np.eye(3))


def assemble_slice(mesh: TriMesh) -> tuple:
    """Assemble (D_t, M_t) for one month on the full I+C space."""
    coords = mesh.triangle_coords()
    m = mesh.n_triangles
    areas = np.abs(signed_area(coords))
    if np.any(areas <= MIN_AREA):
        raise NumericalError("mesh contains a degenerate triangle")

    # vectorized element blocks: (m, 3, 3)
    edges = np.stack(
        [
            coords[:, 2, :] - coords[:, 1, :],
            coords[:, 0, :] - coords[:, 2, :],
            coords[:, 1, :] - coords[:, 0, :],
        ],
        axis=1,
    )
    K = np.einsum("mad,mbd->mab", edges, edges) / (4.0 * areas)[:, None, None]
    M = (np.ones((3, 3)) + np.eye(3))[None, :, :] * (areas / 12.0)[:, None, None]

    gidx = mesh.global_index[mesh.triangles]  # (m, 3)
    rows = np.repeat(gidx, 3, axis=1).ravel()
    cols = np.tile(gidx, (1, 3)).ravel()
    n = mesh.n_global
    D_t = sp.coo_matrix((K.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    M_t = sp.coo_matrix((M.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return D_t, M_t


def zero_slice(n_global: int) -> tuple:
    """Zero (D_t, M_t) pair for months that cannot be meshed."""
    Z = sp.csr_matrix((n_global, n_global))
    return Z, Z.copy()


def _symmetrize(A: sp.csr_matrix) -> sp.csr_matrix:
    return ((A + A.T) * 0.5).tocsr()


def _first_nonpd_index(M_free: sp.csr_matrix, free: np.ndarray):
    """Global index witnessing indefiniteness, or None if M_free looks SPD."""
    diag = M_free.diagonal()
    bad = np.nonzero(diag <= 0)[0]
    if len(bad):
        return int(free[bad[0]])
    if M_free.shape[0] <= _DENSE_SPD_LIMIT:
        _, d, perm = scipy.linalg.ldl(M_free.toarray())
        dd = np.diag(d)
        bad = np.nonzero(dd <= 0)[0]
        if len(bad):
            return int(free[perm[bad[0]]])
    return None


def average_system(slices, coast_index_range, drop_tol=None) -> TimeAveragedSystem:
    """Average per-month (D_t, M_t) pairs and apply Dirichlet constraints.

    Parameters
    ----------
    slices : sequence of (D_t, M_t)
        One pair per month, all of the same dimension; zero pairs are
        allowed and still count toward T.
    coast_index_range : range
        Global indices of coastline points, constrained to zero.
    drop_tol : float, optional
        Indices whose averaged mass diagonal falls below this are dropped
        from the free set (never-meshed or isolated floats).  Default is
        1e-14 times the mean mass diagonal.
    """
    slices = list(slices)
    if not slices:
        raise ValidationError("need at least one slice to average")
    n = slices[0][0].shape[0]
    for D_t, M_t in slices:
        if D_t.shape != (n, n) or M_t.shape != (n, n):
            raise ValidationError("inconsistent slice dimensions")
    T = len(slices)
    D_bar = sp.csr_matrix((n, n))
    M_bar = sp.csr_matrix((n, n))
    for D_t, M_t in slices:
        D_bar = D_bar + D_t
        M_bar = M_bar + M_t
    D_bar = _symmetrize(D_bar * (1.0 / T))
    M_bar = _symmetrize(M_bar * (1.0 / T))

    diag = M_bar.diagonal()
    if drop_tol is None:
        drop_tol = 1e-14 * float(diag.mean())
    constrained = np.zeros(n, dtype=bool)
    constrained[np.asarray(list(coast_index_range), dtype=int)] = True
    isolated = (~constrained) & (diag < drop_tol)
    if isolated.any():
        logger.info("dropping %d never-meshed/isolated indices", int(isolated.sum()))
    free = np.nonzero(~constrained & ~isolated)[0]
    if len(free) == 0:
        raise NumericalError("no free indices remain after constraints")

    M_free = M_bar[free][:, free].tocsr()
    offender = _first_nonpd_index(M_free, free)
    if offender is not None:
        raise NumericalError(
            f"averaged mass matrix is not positive definite at global index {offender}"
        )
    return TimeAveragedSystem(D_bar=D_bar, M_bar=M_bar, free_indices=free, T=T)


def write_matrix_coo(A: sp.spmatrix, path) -> None:
    """Dump the upper triangle as `row col value` lines."""
    coo = sp.triu(A).tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as fh:
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {v!r}\n")


def read_matrix_coo(path, n: int) -> sp.csr_matrix:
    """Inverse of write_matrix_coo: rebuild the full symmetric matrix."""
    rows, cols, vals = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            r, c, v = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    upper = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    strict = sp.triu(upper, k=1)
    return (upper + strict.T).tocsr()
