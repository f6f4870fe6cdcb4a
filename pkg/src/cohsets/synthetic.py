"""Ground-truth trajectory generators for desk-scale pipeline tests.

Two flows: identity (nothing moves) and moving vortices (two rigid disks
that spin about drifting centers while everything else stays put).  The
disk interiors move rigidly, so they are exact coherent sets; static
points that a drifting disk runs over are entrained and co-rotate from
then on.  A dropout stage masks each float down to a contiguous
reporting window, mimicking floats entering and leaving service.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .ingest import CoastlineSet, TrajectoryArray, month_range

DEFAULT_START_MONTH = "2011-01"


@dataclass(frozen=True)
class Vortex:
    center: tuple      # (lon, lat) at month 1
    drift: tuple       # (dlon, dlat) per month
    radius: float      # degrees
    omega: float       # radians per month


@dataclass(frozen=True)
class FlowSpec:
    """Parameters for a synthetic trajectory set."""

    kind: str                       # 'identity' | 'moving-vortices'
    domain: tuple                   # (lon_min, lon_max, lat_min, lat_max)
    T: int
    seed_count: int = 0             # random seeding when > 0
    seed: int = 0
    grid_shape: tuple = ()          # (n_lon, n_lat) lattice seeding
    vortices: tuple = field(default_factory=tuple)
    start_month: str = DEFAULT_START_MONTH

    def __post_init__(self):
        if self.kind not in ("identity", "moving-vortices"):
            raise ValidationError(f"unknown flow kind {self.kind!r}")
        lon_min, lon_max, lat_min, lat_max = self.domain
        if lon_min >= lon_max or lat_min >= lat_max:
            raise ValidationError(f"bad domain rectangle {self.domain!r}")
        if self.T < 2:
            raise ValidationError(f"T must be >= 2, got {self.T}")
        n_grid = self.grid_shape[0] * self.grid_shape[1] if self.grid_shape else 0
        if self.seed_count + n_grid < 3:
            raise ValidationError("need at least 3 seeded floats")


def _seed_positions(spec: FlowSpec) -> np.ndarray:
    lon_min, lon_max, lat_min, lat_max = spec.domain
    parts = []
    if spec.grid_shape:
        n_lon, n_lat = spec.grid_shape
        lons = np.linspace(lon_min, lon_max, n_lon)
        lats = np.linspace(lat_min, lat_max, n_lat)
        glon, glat = np.meshgrid(lons, lats)
        parts.append(np.column_stack([glon.ravel(), glat.ravel()]))
    if spec.seed_count > 0:
        rng = np.random.default_rng(spec.seed)
        lons = rng.uniform(lon_min, lon_max, spec.seed_count)
        lats = rng.uniform(lat_min, lat_max, spec.seed_count)
        parts.append(np.column_stack([lons, lats]))
    return np.vstack(parts)


def _float_ids(n: int) -> tuple:
    width = max(4, len(str(n)))
    return tuple(f"syn{i:0{width}d}" for i in range(n))


def _trajectory(spec: FlowSpec, positions: np.ndarray) -> TrajectoryArray:
    return TrajectoryArray(
        float_ids=_float_ids(positions.shape[0]),
        months=month_range(spec.start_month, spec.T),
        positions=positions,
    )


def gen_identity(spec: FlowSpec) -> TrajectoryArray:
    """Every float sits still for all T months."""
    seeds = _seed_positions(spec)
    positions = np.repeat(seeds[:, None, :], spec.T, axis=1)
    return _trajectory(spec, positions)


def _check_vortices(spec: FlowSpec) -> None:
    if len(spec.vortices) != 2:
        raise ValidationError(f"need exactly 2 vortices, got {len(spec.vortices)}")
    lon_min, lon_max, lat_min, lat_max = spec.domain
    for t in range(spec.T):
        centers = []
        for v in spec.vortices:
            cx = v.center[0] + t * v.drift[0]
            cy = v.center[1] + t * v.drift[1]
            if not (lon_min <= cx - v.radius and cx + v.radius <= lon_max
                    and lat_min <= cy - v.radius and cy + v.radius <= lat_max):
                raise ValidationError(
                    f"vortex leaves the domain at month {t + 1}"
                )
            centers.append((cx, cy, v.radius))
        (x1, y1, r1), (x2, y2, r2) = centers
        if np.hypot(x2 - x1, y2 - y1) <= r1 + r2:
            raise ValidationError(f"vortices overlap at month {t + 1}")


def gen_moving_vortices(spec: FlowSpec) -> TrajectoryArray:
    """Two rigid disks rotate about centers that drift at constant velocity.

    Per month step, points within radius of a current center rotate by
    omega about it and translate with it (a rigid motion of the disk);
    all other points stay fixed.  Points overrun by a drifting disk are
    entrained and subsequently move with it.
    """
    _check_vortices(spec)
    seeds = _seed_positions(spec)
    n = seeds.shape[0]
    positions = np.empty((n, spec.T, 2))
    positions[:, 0, :] = seeds
    x = seeds.copy()
    for t in range(1, spec.T):
        x_new = x.copy()
        for v in spec.vortices:
            cx = v.center[0] + (t - 1) * v.drift[0]
            cy = v.center[1] + (t - 1) * v.drift[1]
            rel = x - np.array([cx, cy])
            inside = np.hypot(rel[:, 0], rel[:, 1]) <= v.radius
            if not inside.any():
                continue
            cos_w, sin_w = np.cos(v.omega), np.sin(v.omega)
            rot = rel[inside] @ np.array([[cos_w, sin_w], [-sin_w, cos_w]])
            x_new[inside] = rot + np.array(
                [cx + v.drift[0], cy + v.drift[1]]
            )
        x = x_new
        positions[:, t, :] = x
    return _trajectory(spec, positions)


def generate(spec: FlowSpec) -> TrajectoryArray:
    if spec.kind == "identity":
        return gen_identity(spec)
    return gen_moving_vortices(spec)


def inside_disk_at_seed(spec: FlowSpec, traj: TrajectoryArray, which: int) -> np.ndarray:
    """Boolean mask of floats seeded inside the given vortex disk."""
    v = spec.vortices[which]
    rel = traj.positions[:, 0, :] - np.array(v.center)
    return np.hypot(rel[:, 0], rel[:, 1]) <= v.radius


def boundary_ring(domain, n_lon: int, n_lat: int) -> CoastlineSet:
    """Static points along a rectangle's border, for Dirichlet pinning.

    The ring carries n_lon points per zonal side and n_lat per meridional
    side, corners included once.
    """
    lon_min, lon_max, lat_min, lat_max = domain
    if n_lon < 2 or n_lat < 2:
        raise ValidationError("ring needs at least 2 points per side")
    lons = np.linspace(lon_min, lon_max, n_lon)
    lats = np.linspace(lat_min, lat_max, n_lat)
    pts = []
    for lon in lons:
        pts.append((lon, lat_min))
        pts.append((lon, lat_max))
    for lat in lats[1:-1]:
        pts.append((lon_min, lat))
        pts.append((lon_max, lat))
    return CoastlineSet(points=np.array(sorted(set(pts))))


def lifetime_pmf(T: int, full_fraction: float = 0.1, mean_short: float = 8.0) -> np.ndarray:
    """A lifetime distribution over 1..T with a given full-span fraction.

    Short lifetimes follow a truncated geometric profile with the given
    mean; the remaining mass sits at exactly T months.
    """
    if not 0.0 <= full_fraction < 1.0:
        raise ValidationError(f"bad full-lifetime fraction {full_fraction}")
    if T < 2:
        raise ValidationError(f"T must be >= 2, got {T}")
    lengths = np.arange(1, T)
    profile = np.exp(-lengths / float(mean_short))
    profile = profile / profile.sum() * (1.0 - full_fraction)
    pmf = np.append(profile, full_fraction)
    return pmf


def apply_dropout(traj: TrajectoryArray, lifetime_distribution, seed: int) -> TrajectoryArray:
    """Mask each float to a contiguous reporting window.

    ``lifetime_distribution`` is a probability vector over lifetimes
    1..T; window starts are uniform over the feasible range.  The result
    is deterministic for a fixed seed.
    """
    T = traj.n_months
    pmf = np.asarray(lifetime_distribution, dtype=float)
    if pmf.shape != (T,):
        raise ValidationError(f"lifetime pmf must have length T={T}")
    if np.any(pmf < 0) or not np.isclose(pmf.sum(), 1.0):
        raise ValidationError("lifetime pmf must be nonnegative and sum to 1")

    rng = np.random.default_rng(seed)
    lengths = rng.choice(np.arange(1, T + 1), size=traj.n_floats, p=pmf)
    starts = rng.integers(0, T - lengths + 1)  # 0-based window start

    positions = traj.positions.copy()
    cols = np.arange(T)
    for i in range(traj.n_floats):
        outside = (cols < starts[i]) | (cols >= starts[i] + lengths[i])
        positions[i, outside, :] = np.nan
    if not (~np.isnan(positions[:, :, 0])).any():
        raise ValidationError("dropout removed every report")
    return TrajectoryArray(traj.float_ids, traj.months, positions)


def survivors_full_span(traj: TrajectoryArray) -> int:
    """Number of floats reporting in every month."""
    return int(traj.present().all(axis=1).sum())
