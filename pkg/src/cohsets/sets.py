"""From likelihood fields to set boundaries, lengths, areas, and thresholds.

Feature fields are sampled onto a regular lon/lat grid, superlevel-set
boundaries are traced with marching squares (linear edge interpolation,
missing values and everything outside the grid counted as below the
threshold, saddles resolved by the cell-average rule), and lengths/areas
pick up the cos(latitude) metric factor.  The dynamic boundary-to-area
ratio is tabulated over a threshold grid and minimized.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .meshing import KM_PER_DEG, TriMesh, eval_p1

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GriddedField:
    """A field sampled on a regular lon/lat grid at one month.

    ``values[i, j]`` sits at ``(origin[0] + j*spacing, origin[1] + i*spacing)``;
    nodes outside the meshed region carry 0, NaN marks missing data (treated
    as 0 by contouring and excluded from areas).
    """

    origin: tuple
    spacing: float
    values: np.ndarray
    month: int

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValidationError(f"grid spacing must be > 0, got {self.spacing}")

    def lons(self) -> np.ndarray:
        return self.origin[0] + self.spacing * np.arange(self.values.shape[1])

    def lats(self) -> np.ndarray:
        return self.origin[1] + self.spacing * np.arange(self.values.shape[0])


@dataclass(frozen=True)
class LevelSetFamily:
    """Per-month boundaries of one feature at a fixed threshold."""

    feature: int
    threshold: float
    months: tuple           # month index per entry
    polygons: tuple         # per month: tuple of closed (k, 2) lon/lat arrays
    lengths_km: np.ndarray  # per month
    areas_km2: np.ndarray   # per month


@dataclass(frozen=True)
class CheegerCurve:
    """Tabulated boundary/area ratio over thresholds for one feature."""

    feature: int
    thresholds: np.ndarray
    h: np.ndarray           # NaN where the evolved set is empty at some month
    c_min: float
    local_minima: np.ndarray


def grid_interpolate(coeffs: np.ndarray, mesh_t: TriMesh, spacing: float,
                     month: int = 0, extent=None) -> GriddedField:
    """Sample a P1 field onto a regular grid; 0 outside the mesh.

    ``extent`` is (lon_min, lon_max, lat_min, lat_max); by default the
    mesh's bounding box, expanded to grid lines (multiples of spacing).
    """
    if spacing <= 0:
        raise ValidationError(f"grid spacing must be > 0, got {spacing}")
    if extent is None:
        lon_min, lat_min = mesh_t.vertices.min(axis=0)
        lon_max, lat_max = mesh_t.vertices.max(axis=0)
    else:
        lon_min, lon_max, lat_min, lat_max = extent
    lon0 = math.floor(lon_min / spacing) * spacing
    lat0 = math.floor(lat_min / spacing) * spacing
    n_lon = int(math.ceil((lon_max - lon0) / spacing)) + 1
    n_lat = int(math.ceil((lat_max - lat0) / spacing)) + 1

    lons = lon0 + spacing * np.arange(n_lon)
    lats = lat0 + spacing * np.arange(n_lat)
    glon, glat = np.meshgrid(lons, lats)
    pts = np.column_stack([glon.ravel(), glat.ravel()])
    values = eval_p1(mesh_t, coeffs, pts).reshape(n_lat, n_lon)
    return GriddedField(origin=(lon0, lat0), spacing=spacing, values=values,
                        month=month)


# marching squares: cell corner bits SW=1, SE=2, NE=4, NW=8; each case maps
# to directed (entry_edge, exit_edge) pairs keeping the superlevel region on
# the left, so loops run counterclockwise around it
_MS_SEGMENTS = {
    1: [("S", "W")],
    2: [("E", "S")],
    3: [("E", "W")],
    4: [("N", "E")],
    6: [("N", "S")],
    7: [("N", "W")],
    8: [("W", "N")],
    9: [("S", "N")],
    11: [("E", "N")],
    12: [("W", "E")],
    13: [("S", "E")],
    14: [("W", "S")],
}


def _edge_key(edge: str, i: int, j: int):
    if edge == "S":
        return ("h", i, j)
    if edge == "N":
        return ("h", i + 1, j)
    if edge == "W":
        return ("v", i, j)
    return ("v", i, j + 1)  # E


def extract_contours(field: GriddedField, c: float) -> list:
    """Closed level-c polygons of the field, counterclockwise.

    The grid is padded with a ring of zeros so superlevel regions touching
    the grid edge still close; missing (NaN) nodes count as 0, i.e. below
    any threshold in (0, 1).
    """
    if not 0.0 < c < 1.0:
        raise ValidationError(f"threshold must be in (0, 1), got {c}")
    vals = np.nan_to_num(field.values, nan=0.0)
    padded = np.zeros((vals.shape[0] + 2, vals.shape[1] + 2))
    padded[1:-1, 1:-1] = vals
    inside = padded >= c
    ny, nx = padded.shape
    sp = field.spacing
    lon_of = lambda j: field.origin[0] + sp * (j - 1)
    lat_of = lambda i: field.origin[1] + sp * (i - 1)

    def crossing(edge, i, j):
        # point where the contour crosses the given cell edge
        if edge in ("S", "N"):
            ii = i if edge == "S" else i + 1
            va, vb = padded[ii, j], padded[ii, j + 1]
            frac = (c - va) / (vb - va)
            return (lon_of(j) + frac * sp, lat_of(ii))
        jj = j if edge == "W" else j + 1
        va, vb = padded[i, jj], padded[i + 1, jj]
        frac = (c - va) / (vb - va)
        return (lon_of(jj), lat_of(i) + frac * sp)

    segments = {}
    for i in range(ny - 1):
        for j in range(nx - 1):
            case = (
                int(inside[i, j])
                | int(inside[i, j + 1]) << 1
                | int(inside[i + 1, j + 1]) << 2
                | int(inside[i + 1, j]) << 3
            )
            if case in (0, 15):
                continue
            if case == 5:
                center = 0.25 * (padded[i, j] + padded[i, j + 1]
                                 + padded[i + 1, j] + padded[i + 1, j + 1])
                segs = [("N", "W"), ("S", "E")] if center >= c else \
                    [("S", "W"), ("N", "E")]
            elif case == 10:
                center = 0.25 * (padded[i, j] + padded[i, j + 1]
                                 + padded[i + 1, j] + padded[i + 1, j + 1])
                segs = [("E", "N"), ("W", "S")] if center >= c else \
                    [("E", "S"), ("W", "N")]
            else:
                segs = _MS_SEGMENTS[case]
            for src, dst in segs:
                segments[_edge_key(src, i, j)] = (
                    _edge_key(dst, i, j),
                    crossing(src, i, j),
                    crossing(dst, i, j),
                )

    polygons = []
    while segments:
        start = next(iter(segments))
        key = start
        points = []
        while True:
            dst, p_from, p_to = segments.pop(key)
            if not points:
                points.append(p_from)
            points.append(p_to)
            key = dst
            if key == start:
                break
        polygons.append(np.array(points))
    return polygons


def boundary_length(polygons, _grid=None) -> float:
    """Total polygon length in km with the cos(latitude) zonal factor."""
    total = 0.0
    for poly in polygons:
        poly = np.asarray(poly)
        dlon = np.diff(poly[:, 0])
        dlat = np.diff(poly[:, 1])
        mean_lat = np.radians(0.5 * (poly[1:, 1] + poly[:-1, 1]))
        total += float(
            np.sum(np.hypot(dlon * np.cos(mean_lat), dlat)) * KM_PER_DEG
        )
    return total


def superlevel_area(field: GriddedField, c: float) -> float:
    """Node-counting area in km^2: each qualifying node owns one grid cell."""
    if not 0.0 < c < 1.0:
        raise ValidationError(f"threshold must be in (0, 1), got {c}")
    with np.errstate(invalid="ignore"):
        mask = field.values >= c
    if not mask.any():
        return 0.0
    lat = np.radians(field.lats())
    cell = (KM_PER_DEG * field.spacing) ** 2
    return float((mask.sum(axis=1) * np.cos(lat)).sum() * cell)


def polygon_area_km2(poly: np.ndarray) -> float:
    """Shoelace area of one closed polygon with the latitude factor.

    Independent of the node-counting estimate; used for cross-checks.
    """
    poly = np.asarray(poly)
    lon, lat = poly[:, 0], poly[:, 1]
    mean_lat = np.radians(0.5 * (lat[1:] + lat[:-1]))
    # contour integral of sin(lat) d(lon): the exact potential for the
    # cos(lat) area element, evaluated with the midpoint rule per edge
    circulation = float(np.sum(np.diff(lon) * np.sin(mean_lat)))
    return abs(circulation) * (180.0 / math.pi) * KM_PER_DEG**2


def cheeger_value(fields, c: float) -> float:
    """Time-mean boundary-length/area ratio of the level-c superlevel set."""
    fields = list(fields)
    if not fields:
        raise ValidationError("need at least one monthly field")
    ratios = []
    for field in fields:
        area = superlevel_area(field, c)
        if area <= 0.0:
            raise NumericalError(
                f"superlevel set empty at month {field.month} for c={c:.4g}"
            )
        length = boundary_length(extract_contours(field, c))
        ratios.append(length / area)
    return float(np.mean(ratios))


def optimize_threshold(fields, step: float = 0.01, feature: int = 0) -> CheegerCurve:
    """Tabulate h over the threshold grid and select the global minimizer.

    Thresholds run over {step, 2*step, ..., 1-step}; months with an empty
    evolved set make h undefined (NaN) at that threshold.  Ties break
    toward smaller c, and all local minimizers are reported.
    """
    if not 0.0 < step < 0.5:
        raise ValidationError(f"step must be in (0, 0.5), got {step}")
    n = int(round(1.0 / step)) - 1
    thresholds = step * np.arange(1, n + 1)
    h = np.full(n, np.nan)
    for idx, c in enumerate(thresholds):
        try:
            h[idx] = cheeger_value(fields, float(c))
        except NumericalError:
            continue
    if np.all(np.isnan(h)):
        raise NumericalError("superlevel set empty at every threshold")

    c_min = float(thresholds[np.nanargmin(h)])
    padded = np.concatenate([[np.inf], np.where(np.isnan(h), np.inf, h), [np.inf]])
    is_local = (padded[1:-1] <= padded[:-2]) & (padded[1:-1] <= padded[2:]) \
        & np.isfinite(padded[1:-1])
    local_minima = thresholds[is_local]
    return CheegerCurve(feature=feature, thresholds=thresholds, h=h,
                        c_min=c_min, local_minima=local_minima)


def evolve_boundaries(fields, c_min: float, feature: int = 0) -> LevelSetFamily:
    """Trace every month's boundary at one fixed threshold."""
    fields = list(fields)
    polygons = []
    lengths = np.zeros(len(fields))
    areas = np.zeros(len(fields))
    months = []
    for idx, field in enumerate(fields):
        polys = extract_contours(field, c_min)
        polygons.append(tuple(polys))
        lengths[idx] = boundary_length(polys)
        areas[idx] = superlevel_area(field, c_min)
        months.append(field.month)
    return LevelSetFamily(feature=feature, threshold=float(c_min),
                          months=tuple(months), polygons=tuple(polygons),
                          lengths_km=lengths, areas_km2=areas)


def family_geojson(family: LevelSetFamily) -> dict:
    """One Feature per month; geometry is a MultiPolygon of boundary rings."""
    features = []
    for idx, month in enumerate(family.months):
        polys = family.polygons[idx]
        if polys:
            coords = [[[[float(lon), float(lat)] for lon, lat in poly]]
                      for poly in polys]
            geometry = {"type": "MultiPolygon", "coordinates": coords}
        else:
            geometry = None
        features.append(
            {
                "type": "Feature",
                "geometry": geometry,
                "properties": {
                    "k": family.feature,
                    "t": int(month),
                    "c": family.threshold,
                    "boundary_km": float(family.lengths_km[idx]),
                    "area_km2": float(family.areas_km2[idx]),
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}


def write_family_geojson(family: LevelSetFamily, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(family_geojson(family), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_cheeger_csv(curves, path) -> None:
    """Write `k,c,h` rows for a sequence of CheegerCurves."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "c", "h"])
        for curve in curves:
            for c, hval in zip(curve.thresholds, curve.h):
                writer.writerow([curve.feature, repr(float(c)), repr(float(hval))])
