"""Float position records, monthly trajectory binning, and coastline loading.

A trajectory array holds one row per float and one column per calendar
month; a cell is either the float's first reported position inside the
month's reporting window or a gap (NaN).  Month indices are 1-based
throughout the public API and the on-disk CSV formats; they label months
``t = 1..T`` starting at ``start_month``.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import ArtifactError, ValidationError

logger = logging.getLogger(__name__)

TRAJECTORY_HEADER = ["float_id", "month_index", "lon", "lat"]
RECORDS_HEADER = ["float_id", "timestamp", "lon", "lat"]


def normalize_lon(lon: float) -> float:
    """Map a longitude in degrees onto [-180, 180)."""
    return (lon + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class FloatRecord:
    """A single surfacing transmission: who, when, where."""

    float_id: str
    timestamp: datetime
    lon: float
    lat: float


@dataclass(frozen=True)
class TrajectoryArray:
    """Monthly positions of I floats over T consecutive months.

    Attributes
    ----------
    float_ids : tuple of str
        Identifiers, one per row.
    months : tuple of str
        ``YYYY-MM`` labels for columns ``t = 1..T``, strictly consecutive.
    positions : ndarray, shape (I, T, 2)
        lon/lat per float and month; a gap is stored as NaN in both
        components.
    """

    float_ids: tuple
    months: tuple
    positions: np.ndarray

    def __post_init__(self):
        I, T = len(self.float_ids), len(self.months)
        if self.positions.shape != (I, T, 2):
            raise ValidationError(
                f"positions shape {self.positions.shape} != ({I}, {T}, 2)"
            )

    @property
    def n_floats(self) -> int:
        return len(self.float_ids)

    @property
    def n_months(self) -> int:
        return len(self.months)

    def present(self) -> np.ndarray:
        """Boolean (I, T) mask of non-gap entries."""
        return ~np.isnan(self.positions[:, :, 0])


@dataclass(frozen=True)
class CoastlineSet:
    """Fixed boundary points where the eigenproblem is pinned to zero."""

    points: np.ndarray  # (C, 2) lon/lat

    def __post_init__(self):
        if len(self.points) < 3:
            raise ValidationError(
                f"coastline needs at least 3 points, got {len(self.points)}"
            )

    @property
    def n_points(self) -> int:
        return len(self.points)


def month_label(year: int, month: int) -> str:
    return f"{year:04d}-{month:02d}"


def parse_month_label(label: str) -> tuple:
    try:
        y, m = label.split("-")
        y, m = int(y), int(m)
    except ValueError as exc:
        raise ValidationError(f"bad month label {label!r}, want YYYY-MM") from exc
    if not 1 <= m <= 12:
        raise ValidationError(f"bad month label {label!r}: month {m} out of range")
    return y, m


def month_range(start_month: str, T: int) -> tuple:
    """T consecutive YYYY-MM labels starting at start_month."""
    y, m = parse_month_label(start_month)
    labels = []
    for _ in range(T):
        labels.append(month_label(y, m))
        m += 1
        if m == 13:
            y, m = y + 1, 1
    return tuple(labels)


def _open_text(source):
    """Accept a path or a binary/text stream; yield a text stream."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise ArtifactError(f"input file not found: {path}")
        return open(path, "r", encoding="utf-8", newline="")
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"))
    if hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return io.StringIO(data)
    raise ValidationError(f"unsupported source type {type(source)!r}")


def _parse_timestamp(text: str, line_num: int) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ValidationError(f"bad timestamp {text!r}, line {line_num}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_float_records(source) -> list:
    """Parse a `float_id,timestamp,lon,lat` CSV into FloatRecords.

    Rows are returned in file order.  Longitudes are normalized to
    [-180, 180); latitudes outside [-90, 90] are rejected with the
    offending line number.
    """
    records = []
    with _open_text(source) as stream:
        reader = csv.reader(stream)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("empty records file") from None
        if [h.strip() for h in header] != RECORDS_HEADER:
            raise ValidationError(
                f"bad header {header!r}, want {','.join(RECORDS_HEADER)}"
            )
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise ValidationError(f"expected 4 fields, got {len(row)}, line {line}")
            float_id = row[0].strip()
            if not float_id:
                raise ValidationError(f"empty float_id, line {line}")
            ts = _parse_timestamp(row[1], line)
            try:
                lon, lat = float(row[2]), float(row[3])
            except ValueError as exc:
                raise ValidationError(f"bad coordinate, line {line}") from exc
            if not np.isfinite(lon) or not np.isfinite(lat):
                raise ValidationError(f"non-finite coordinate, line {line}")
            if not -90.0 <= lat <= 90.0:
                raise ValidationError(f"latitude out of range, line {line}")
            records.append(FloatRecord(float_id, ts, normalize_lon(lon), lat))
    if not records:
        raise ValidationError("records file has a header but no rows")
    logger.info("parsed %d float records", len(records))
    return records


def bin_monthly(records, start_month: str, T: int, day_window=(1, 12)) -> TrajectoryArray:
    """Bin surfacing records into a monthly trajectory array.

    For each float and month, the position is the earliest record whose
    day-of-month lies in ``day_window`` (inclusive on both ends); months
    with no qualifying record are gaps.  Floats that never qualify are
    dropped (and counted in the log).
    """
    if T < 2:
        raise ValidationError(f"T must be >= 2, got {T}")
    lo, hi = int(day_window[0]), int(day_window[1])
    if not (1 <= lo <= hi <= 31):
        raise ValidationError(f"bad day window {day_window!r}")

    months = month_range(start_month, T)
    month_to_col = {lab: t for t, lab in enumerate(months)}

    # float_id -> column -> (timestamp, lon, lat) of current earliest winner
    best = {}
    order = []
    for rec in records:
        lab = month_label(rec.timestamp.year, rec.timestamp.month)
        col = month_to_col.get(lab)
        if col is None or not lo <= rec.timestamp.day <= hi:
            continue
        if rec.float_id not in best:
            best[rec.float_id] = {}
            order.append(rec.float_id)
        slot = best[rec.float_id].get(col)
        if slot is None or rec.timestamp < slot[0]:
            best[rec.float_id][col] = (rec.timestamp, rec.lon, rec.lat)

    all_ids = []
    seen = set()
    for rec in records:
        if rec.float_id not in seen:
            seen.add(rec.float_id)
            all_ids.append(rec.float_id)
    dropped = [fid for fid in all_ids if fid not in best]
    if dropped:
        logger.info("dropped %d floats with no in-window reports", len(dropped))
    if not order:
        raise ValidationError("empty trajectory set: no float reports in any month")

    positions = np.full((len(order), T, 2), np.nan)
    for i, fid in enumerate(order):
        for col, (_, lon, lat) in best[fid].items():
            positions[i, col] = (lon, lat)
    return TrajectoryArray(tuple(order), months, positions)


def reporting_set(traj: TrajectoryArray, t: int) -> np.ndarray:
    """Indices of floats with a position at month t (1-based), sorted."""
    if not 1 <= t <= traj.n_months:
        raise ValidationError(f"month index {t} out of range 1..{traj.n_months}")
    mask = ~np.isnan(traj.positions[:, t - 1, 0])
    return np.nonzero(mask)[0]


def load_coastline(source, subsample_stride: int = 5) -> CoastlineSet:
    """Load a `lon,lat` CSV, keep every stride-th point, drop duplicates."""
    if subsample_stride < 1:
        raise ValidationError(f"stride must be >= 1, got {subsample_stride}")
    pts = []
    with _open_text(source) as stream:
        reader = csv.reader(stream)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("empty coastline file") from None
        if [h.strip() for h in header] != ["lon", "lat"]:
            raise ValidationError(f"bad coastline header {header!r}, want lon,lat")
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise ValidationError(f"expected 2 fields, got {len(row)}, line {line}")
            try:
                lon, lat = float(row[0]), float(row[1])
            except ValueError as exc:
                raise ValidationError(f"bad coordinate, line {line}") from exc
            if not -90.0 <= lat <= 90.0:
                raise ValidationError(f"latitude out of range, line {line}")
            pts.append((normalize_lon(lon), lat))
    kept = pts[::subsample_stride]
    # dedup within 1e-9 degrees, first occurrence wins
    seen = set()
    unique = []
    for lon, lat in kept:
        key = (round(lon * 1e9), round(lat * 1e9))
        if key not in seen:
            seen.add(key)
            unique.append((lon, lat))
    if len(unique) < 3:
        raise ValidationError(
            f"coastline has {len(unique)} points after subsampling, need >= 3"
        )
    return CoastlineSet(np.array(unique, dtype=float))


def write_trajectory_csv(traj: TrajectoryArray, path) -> None:
    """Serialize as `float_id,month_index,lon,lat` rows, gaps omitted."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_HEADER)
        for i, fid in enumerate(traj.float_ids):
            for t in range(traj.n_months):
                lon, lat = traj.positions[i, t]
                if np.isnan(lon):
                    continue
                writer.writerow([fid, t + 1, repr(float(lon)), repr(float(lat))])


def read_trajectory_csv(path, start_month: str, T: int) -> TrajectoryArray:
    """Inverse of write_trajectory_csv; float order = first appearance."""
    months = month_range(start_month, T)
    ids = []
    index = {}
    cells = []
    with _open_text(path) as stream:
        reader = csv.reader(stream)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRAJECTORY_HEADER:
            raise ValidationError(
                f"bad trajectory header {header!r}, want {','.join(TRAJECTORY_HEADER)}"
            )
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise ValidationError(f"expected 4 fields, got {len(row)}, line {line}")
            fid = row[0].strip()
            try:
                t = int(row[1])
                lon, lat = float(row[2]), float(row[3])
            except ValueError as exc:
                raise ValidationError(f"bad row, line {line}") from exc
            if not 1 <= t <= T:
                raise ValidationError(f"month index {t} out of range 1..{T}, line {line}")
            if fid not in index:
                index[fid] = len(ids)
                ids.append(fid)
            cells.append((index[fid], t - 1, lon, lat))
    if not ids:
        raise ValidationError("empty trajectory file")
    positions = np.full((len(ids), T, 2), np.nan)
    for i, t, lon, lat in cells:
        positions[i, t] = (lon, lat)
    return TrajectoryArray(tuple(ids), months, positions)


def trajectory_to_records(traj: TrajectoryArray, day: int = 2) -> list:
    """Expand a trajectory array back into one surfacing record per cell.

    Timestamps are placed on the given day-of-month so that re-binning
    with the default window reproduces the array exactly.
    """
    records = []
    for i, fid in enumerate(traj.float_ids):
        for t, lab in enumerate(traj.months):
            lon, lat = traj.positions[i, t]
            if np.isnan(lon):
                continue
            y, m = parse_month_label(lab)
            ts = datetime(y, m, day, 12, 0, 0, tzinfo=timezone.utc)
            records.append(FloatRecord(fid, ts, float(lon), float(lat)))
    return records


def write_records_csv(records, path) -> None:
    """Serialize FloatRecords as a `float_id,timestamp,lon,lat` CSV."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORDS_HEADER)
        for rec in records:
            ts = rec.timestamp.astimezone(timezone.utc)
            writer.writerow(
                [
                    rec.float_id,
                    ts.strftime("%Y-%m-%dT%H:%M:%SZ"),
                    repr(float(rec.lon)),
                    repr(float(rec.lat)),
                ]
            )
