"""Per-month triangulations of reporting floats plus coastline points.

Meshing happens in the flat lon/lat plane; latitude-dependent metric
factors enter only in downstream length/area computations.  Vertices keep
a global index: floats occupy 0..I-1 (their row in the trajectory array)
and coastline points occupy I..I+C-1, so every per-month mesh addresses
one shared coefficient space of dimension I+C.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import NumericalError, ValidationError
from .ingest import CoastlineSet, TrajectoryArray, reporting_set

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
KM_PER_DEG = math.pi * EARTH_RADIUS_KM / 180.0  # 111.19 km

# triangles flatter than this (plane-degree units) are dropped at build time
DEGENERATE_AREA = 1e-12


@dataclass(frozen=True)
class TriMesh:
    """A triangulation of one month's point set.

    Attributes
    ----------
    vertices : ndarray, shape (n, 2)
        lon/lat positions.
    global_index : ndarray, shape (n,)
        Global coefficient index of each vertex (floats first, then
        coastline).
    triangles : ndarray, shape (m, 3)
        Rows of vertex indices (into ``vertices``), counterclockwise.
    n_global : int
        Dimension I+C of the shared coefficient space.
    """

    vertices: np.ndarray
    global_index: np.ndarray
    triangles: np.ndarray
    n_global: int

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_coords(self) -> np.ndarray:
        """(m, 3, 2) array of triangle vertex coordinates."""
        return self.vertices[self.triangles]


@dataclass(frozen=True)
class HatBasisField:
    """A piecewise-linear field: one coefficient per global index.

    Coefficients at indices absent from the mesh are zero by convention;
    evaluation outside the meshed region returns zero.
    """

    mesh: TriMesh
    coefficients: np.ndarray  # (n_global,)

    def vertex_values(self) -> np.ndarray:
        return self.coefficients[self.mesh.global_index]

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at (k, 2) lon/lat points; 0 outside the mesh."""
        return eval_p1(self.mesh, self.coefficients, np.asarray(points, dtype=float))


def great_circle_km(p, q) -> float:
    """Haversine distance in km between two lon/lat points."""
    lon1, lat1 = math.radians(p[0]), math.radians(p[1])
    lon2, lat2 = math.radians(q[0]), math.radians(q[1])
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def signed_area(coords: np.ndarray) -> np.ndarray:
    """Signed area(s) of triangles given as (..., 3, 2) coordinates."""
    a, b, c = coords[..., 0, :], coords[..., 1, :], coords[..., 2, :]
    return 0.5 * (
        (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
        - (c[..., 0] - a[..., 0]) * (b[..., 1] - a[..., 1])
    )


def triangulate_slice(traj: TrajectoryArray, t: int, coast: CoastlineSet) -> TriMesh:
    """Delaunay-triangulate month t's reporting floats plus the coastline.

    Exactly coincident points (within 1e-9 degrees) are merged with a
    warning; the surviving vertex keeps the lowest global index, so a
    float sitting on a coastline point retains its float index.
    """
    floats_idx = reporting_set(traj, t)
    I = traj.n_floats
    float_pts = traj.positions[floats_idx, t - 1, :]
    pts = np.vstack([float_pts, coast.points])
    gidx = np.concatenate([floats_idx, I + np.arange(coast.n_points)])

    # merge coincident points; the first occurrence wins, and floats are
    # stacked before coastline points, so a float keeps its index
    key = np.round(pts * 1e9).astype(np.int64)
    _, keep = np.unique(key, axis=0, return_index=True)
    if len(keep) < len(pts):
        logger.warning("month %d: merged %d coincident points", t, len(pts) - len(keep))
    order = np.sort(keep)
    pts_u = pts[order]
    gidx_u = gidx[order]

    if len(pts_u) < 3:
        raise NumericalError(f"month {t}: only {len(pts_u)} distinct points, need >= 3")

    try:
        tri = Delaunay(pts_u)
    except QhullError as exc:
        raise NumericalError(f"month {t}: triangulation failed: {exc}") from exc
    simplices = tri.simplices.copy()
    if len(simplices) == 0:
        raise NumericalError(f"month {t}: all points collinear")

    coords = pts_u[simplices]
    areas = signed_area(coords)
    flip = areas < 0
    simplices[flip] = simplices[flip][:, [0, 2, 1]]
    areas = np.abs(areas)
    good = areas > DEGENERATE_AREA
    if not np.all(good):
        logger.warning("month %d: dropped %d degenerate triangles", t, int((~good).sum()))
    simplices = simplices[good]
    if len(simplices) == 0:
        raise NumericalError(f"month {t}: all triangles degenerate")

    return TriMesh(
        vertices=pts_u,
        global_index=gidx_u.astype(np.int64),
        triangles=simplices.astype(np.int64),
        n_global=I + coast.n_points,
    )


def filter_triangles(mesh: TriMesh, max_edge_km: float) -> TriMesh:
    """Drop triangles with any great-circle edge longer than max_edge_km.

    Vertices are retained even when they end up isolated; isolated global
    indices are removed later when Dirichlet constraints are applied.
    """
    if max_edge_km <= 0:
        raise ValidationError(f"max_edge_km must be > 0, got {max_edge_km}")
    keep = np.empty(mesh.n_triangles, dtype=bool)
    verts = mesh.vertices
    for k, (a, b, c) in enumerate(mesh.triangles):
        keep[k] = (
            great_circle_km(verts[a], verts[b]) <= max_edge_km
            and great_circle_km(verts[b], verts[c]) <= max_edge_km
            and great_circle_km(verts[c], verts[a]) <= max_edge_km
        )
    if not keep.any():
        raise NumericalError(
            f"empty mesh: no triangle has all edges <= {max_edge_km} km"
        )
    return TriMesh(
        vertices=mesh.vertices,
        global_index=mesh.global_index,
        triangles=mesh.triangles[keep],
        n_global=mesh.n_global,
    )


def eval_p1(mesh: TriMesh, coefficients: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate a P1 field (coefficients over global indices) at points.

    Points outside every triangle evaluate to 0.  Evaluation is exact
    barycentric interpolation on the mesh's own triangle set, so it
    respects edge filtering (unlike re-triangulating interpolators).
    """
    pts = np.atleast_2d(points)
    values = np.zeros(len(pts))
    done = np.zeros(len(pts), dtype=bool)
    vert_vals = coefficients[mesh.global_index]
    coords = mesh.triangle_coords()
    eps = 1e-12

    lon_min = coords[:, :, 0].min(axis=1)
    lon_max = coords[:, :, 0].max(axis=1)
    lat_min = coords[:, :, 1].min(axis=1)
    lat_max = coords[:, :, 1].max(axis=1)

    for k in range(mesh.n_triangles):
        pending = ~done
        if not pending.any():
            break
        cand = np.nonzero(
            pending
            & (pts[:, 0] >= lon_min[k] - eps)
            & (pts[:, 0] <= lon_max[k] + eps)
            & (pts[:, 1] >= lat_min[k] - eps)
            & (pts[:, 1] <= lat_max[k] + eps)
        )[0]
        if len(cand) == 0:
            continue
        a, b, c = coords[k]
        det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
        px = pts[cand, 0] - a[0]
        py = pts[cand, 1] - a[1]
        w1 = ((c[1] - a[1]) * px - (c[0] - a[0]) * py) / det
        w2 = (-(b[1] - a[1]) * px + (b[0] - a[0]) * py) / det
        w0 = 1.0 - w1 - w2
        tol = 1e-10
        inside = (w0 >= -tol) & (w1 >= -tol) & (w2 >= -tol)
        hit = cand[inside]
        if len(hit) == 0:
            continue
        va, vb, vc = vert_vals[mesh.triangles[k]]
        values[hit] = w0[inside] * va + w1[inside] * vb + w2[inside] * vc
        done[hit] = True

    if points.ndim == 1:
        return values[0]
    return values


def read_mesh_csv(vertices_path, triangles_path, n_global: int) -> TriMesh:
    """Rebuild a TriMesh from the CSV dump."""
    gidx, verts = [], []
    with open(vertices_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row:
                gidx.append(int(row[0]))
                verts.append((float(row[1]), float(row[2])))
    tris = []
    with open(triangles_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row:
                tris.append((int(row[0]), int(row[1]), int(row[2])))
    return TriMesh(
        vertices=np.array(verts, dtype=float),
        global_index=np.array(gidx, dtype=np.int64),
        triangles=np.array(tris, dtype=np.int64),
        n_global=n_global,
    )


def write_mesh_csv(mesh: TriMesh, vertices_path, triangles_path) -> None:
    """Dump `global_index,lon,lat` and `v1,v2,v3` inspection CSVs."""
    with open(vertices_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["global_index", "lon", "lat"])
        for g, (lon, lat) in zip(mesh.global_index, mesh.vertices):
            writer.writerow([int(g), repr(float(lon)), repr(float(lat))])
    with open(triangles_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["v1", "v2", "v3"])
        for a, b, c in mesh.triangles:
            writer.writerow([int(a), int(b), int(c)])
