"""Fleet health summaries: activity counts, lifetimes, RMS drift speeds."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .ingest import TrajectoryArray
from .meshing import HatBasisField, TriMesh, great_circle_km


@dataclass(frozen=True)
class FleetStats:
    """Per-month activity and per-float lifetime/speed summaries."""

    active: np.ndarray      # (T,) reporting floats per month
    lifetimes: np.ndarray   # (I,) last - first reporting month + 1
    rms_speed: np.ndarray   # (I,) km/month, NaN without consecutive reports


def active_counts(traj: TrajectoryArray) -> np.ndarray:
    """|R_t| for every month."""
    return traj.present().sum(axis=0)


def float_lifetimes(traj: TrajectoryArray) -> np.ndarray:
    """Reporting span in months, gaps included."""
    present = traj.present()
    lifetimes = np.zeros(traj.n_floats, dtype=int)
    for i in range(traj.n_floats):
        cols = np.nonzero(present[i])[0]
        lifetimes[i] = cols[-1] - cols[0] + 1
    return lifetimes


def lifetime_histogram(traj: TrajectoryArray, bin_width: int = 1):
    """(bin_edges, counts) over lifetimes; bins cover 1..T inclusively."""
    if bin_width < 1:
        raise ValidationError(f"bin width must be >= 1, got {bin_width}")
    lifetimes = float_lifetimes(traj)
    T = traj.n_months
    edges = np.arange(1, T + bin_width + 1, bin_width)
    counts, _ = np.histogram(lifetimes, bins=edges)
    return edges, counts


def rms_speeds(traj: TrajectoryArray) -> np.ndarray:
    """RMS of month-over-month great-circle displacements, km/month.

    Displacements across gaps are excluded; a float with no two
    consecutive reports gets NaN.
    """
    present = traj.present()
    out = np.full(traj.n_floats, np.nan)
    for i in range(traj.n_floats):
        both = present[i, :-1] & present[i, 1:]
        cols = np.nonzero(both)[0]
        if len(cols) == 0:
            continue
        d2 = [
            great_circle_km(traj.positions[i, t], traj.positions[i, t + 1]) ** 2
            for t in cols
        ]
        out[i] = np.sqrt(np.mean(d2))
    return out


def fleet_stats(traj: TrajectoryArray) -> FleetStats:
    return FleetStats(
        active=active_counts(traj),
        lifetimes=float_lifetimes(traj),
        rms_speed=rms_speeds(traj),
    )


def rms_speed_field(traj: TrajectoryArray, mesh_t: TriMesh) -> HatBasisField:
    """Attach per-float RMS speeds to a display month's mesh.

    Floats without a defined speed contribute zero coefficients (they are
    outside the field's support).
    """
    speeds = rms_speeds(traj)
    coeffs = np.zeros(mesh_t.n_global)
    defined = ~np.isnan(speeds)
    coeffs[np.nonzero(defined)[0]] = speeds[defined]
    return HatBasisField(mesh=mesh_t, coefficients=coeffs)


def write_active_csv(stats: FleetStats, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "count"])
        for t, count in enumerate(stats.active, start=1):
            writer.writerow([t, int(count)])


def write_lifetimes_csv(edges, counts, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_start", "bin_end", "count"])
        for k, count in enumerate(counts):
            writer.writerow([int(edges[k]), int(edges[k + 1]) - 1, int(count)])


def write_rms_csv(traj: TrajectoryArray, stats: FleetStats, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["float_id", "rms_km_per_month"])
        for fid, speed in zip(traj.float_ids, stats.rms_speed):
            writer.writerow([fid, repr(float(speed))])
