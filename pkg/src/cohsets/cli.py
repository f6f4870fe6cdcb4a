"""Pipeline orchestration: subcommands, config handling, run manifest.

Configuration is flat key=value text.  Precedence, lowest to highest:
built-in defaults, config file, COHSETS_* environment variables, command
line flags.  Every stage reads the previous stage's on-disk artifacts, so
a full `run` is byte-identical to invoking the stage subcommands in
sequence.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O
error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .assembly import (TimeAveragedSystem, assemble_slice, average_system,
                       read_matrix_coo, write_matrix_coo, zero_slice)
from .diagnostics import (fleet_stats, lifetime_histogram, rms_speed_field,
                          write_active_csv, write_lifetimes_csv, write_rms_csv)
from .eigensolver import read_eigen_csv, solve_leading, write_eigen_csv
from .errors import ArtifactError, CohsetsError, NumericalError, ValidationError
from .ingest import (bin_monthly, load_coastline, parse_float_records,
                     read_trajectory_csv, write_records_csv,
                     write_trajectory_csv)
from .meshing import (filter_triangles, read_mesh_csv, triangulate_slice,
                      write_mesh_csv)
from .seba import max_combine, read_seba_columns, seba_rotate, write_seba_csv
from .sets import (evolve_boundaries, grid_interpolate, optimize_threshold,
                   write_cheeger_csv, write_family_geojson)
from .synthetic import (FlowSpec, Vortex, apply_dropout, boundary_ring,
                        generate, lifetime_pmf, survivors_full_span)

logger = logging.getLogger(__name__)

ENV_PREFIX = "COHSETS_"
STAGE_ORDER = ["ingest", "mesh", "assemble", "solve", "seba", "sets", "diag"]


@dataclass
class RunConfig:
    """All pipeline knobs; defaults match the standard processing values."""

    records_csv: str = ""
    coastline_csv: str = ""
    out_dir: str = "out"
    start_month: str = "2011-01"
    months: int = 72
    day_window_first: int = 1
    day_window_last: int = 12
    coastline_stride: int = 5
    max_edge_km: float = 1500.0
    eigenpairs: int = 8
    eigen_tol: float = 1e-8
    seba_mu: float = 0.0          # 0 = automatic 0.99/sqrt(n_free)
    seba_tol: float = 1e-12
    seba_max_iter: int = 1000
    seba_restarts: int = 0
    grid_spacing_deg: float = 1.0
    threshold_step: float = 0.01
    display_month: int = 0        # 0 = middle month
    seed: int = 0
    threads: int = 0              # 0 = auto
    # synthetic-input block (used by `synth`, ignored otherwise)
    flow: str = ""                # '' | identity | moving-vortices
    domain: str = ""              # lon_min,lon_max,lat_min,lat_max
    seed_count: int = 0
    grid_lon: int = 0
    grid_lat: int = 0
    vortex1: str = ""             # clon,clat,dlon,dlat,radius,omega
    vortex2: str = ""
    ring_lon: int = 0             # ring points per zonal side (0 = skip ring)
    ring_lat: int = 0
    dropout: int = 0              # 1 = apply contiguous-window dropout
    dropout_full_fraction: float = 0.1
    dropout_mean_short: float = 8.0

    def validate(self) -> None:
        if self.months < 2:
            raise ValidationError(f"months must be >= 2, got {self.months}")
        if not 1 <= self.day_window_first <= self.day_window_last <= 31:
            raise ValidationError(
                f"bad day window [{self.day_window_first}, {self.day_window_last}]"
            )
        if self.coastline_stride < 1:
            raise ValidationError(f"stride must be >= 1, got {self.coastline_stride}")
        if self.max_edge_km <= 0:
            raise ValidationError(f"max_edge_km must be > 0, got {self.max_edge_km}")
        if self.eigenpairs < 1:
            raise ValidationError(f"eigenpairs must be >= 1, got {self.eigenpairs}")
        if self.grid_spacing_deg <= 0:
            raise ValidationError(
                f"grid_spacing_deg must be > 0, got {self.grid_spacing_deg}"
            )
        if not 0.0 < self.threshold_step < 0.5:
            raise ValidationError(
                f"threshold_step must be in (0, 0.5), got {self.threshold_step}"
            )
        if self.seba_max_iter < 1:
            raise ValidationError("seba_max_iter must be >= 1")
        if self.threads < 0:
            raise ValidationError("threads must be >= 0")

    @property
    def day_window(self):
        return (self.day_window_first, self.day_window_last)


def _coerce(name: str, kind, raw: str):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ValidationError(f"bad value {raw!r} for config key {name}") from exc


def load_config(path=None, env=None, overrides=None) -> RunConfig:
    """Merge defaults, config file, environment, and explicit overrides."""
    cfg = RunConfig()
    spec = {f.name: f.type for f in fields(RunConfig)}
    types = {"int": int, "float": float, "str": str}

    def assign(name, raw):
        if name not in spec:
            raise ValidationError(f"unknown config key {name!r}")
        kind = types.get(spec[name], str) if isinstance(spec[name], str) else spec[name]
        setattr(cfg, name, _coerce(name, kind, raw))

    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ArtifactError(f"config file not found: {p}")
        for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"bad config line {lineno}: {line!r}")
            key, _, value = line.partition("=")
            assign(key.strip(), value.strip())

    env = os.environ if env is None else env
    for name in spec:
        raw = env.get(ENV_PREFIX + name.upper())
        if raw is not None:
            assign(name, raw)

    for name, raw in (overrides or {}).items():
        assign(name, raw)

    cfg.validate()
    return cfg


# ---------------------------------------------------------------- artifacts

def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise ArtifactError(f"{stage}: missing upstream artifact {path}")
    return path


def _records_path(cfg: RunConfig) -> Path:
    if cfg.flow:
        return _out(cfg) / "records.csv"
    if not cfg.records_csv:
        raise ValidationError("records_csv is not set (and no synthetic flow)")
    return Path(cfg.records_csv)


def _coastline_path(cfg: RunConfig) -> Path:
    if cfg.flow:
        return _out(cfg) / "coastline.csv"
    if not cfg.coastline_csv:
        raise ValidationError("coastline_csv is not set (and no synthetic flow)")
    return Path(cfg.coastline_csv)


def _load_traj(cfg: RunConfig):
    path = _need(_out(cfg) / "trajectory.csv", "pipeline")
    return read_trajectory_csv(path, cfg.start_month, cfg.months)


def _load_coast(cfg: RunConfig):
    return load_coastline(_coastline_path(cfg), cfg.coastline_stride)


def _mesh_paths(cfg: RunConfig, t: int):
    mesh_dir = _out(cfg) / "mesh"
    return (mesh_dir / f"month_{t:03d}_vertices.csv",
            mesh_dir / f"month_{t:03d}_triangles.csv")


def _load_mesh(cfg: RunConfig, t: int, n_global: int):
    vp, tp = _mesh_paths(cfg, t)
    _need(vp, "mesh artifacts")
    _need(tp, "mesh artifacts")
    return read_mesh_csv(vp, tp, n_global)


def _system_meta(cfg: RunConfig) -> dict:
    path = _need(_out(cfg) / "system" / "system.json", "assemble artifacts")
    return json.loads(path.read_text(encoding="utf-8"))


def _update_manifest(cfg: RunConfig, section: str, payload: dict) -> None:
    path = _out(cfg) / "manifest.json"
    manifest = {}
    if path.exists():
        manifest = json.loads(path.read_text(encoding="utf-8"))
    manifest.setdefault("config", asdict(cfg))
    manifest.setdefault("versions", {
        "cohsets": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": sys.version.split()[0],
    })
    manifest[section] = payload
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _pool_size(cfg: RunConfig) -> int:
    return cfg.threads if cfg.threads > 0 else (os.cpu_count() or 1)


# ------------------------------------------------------------------- stages

def run_synth(cfg: RunConfig) -> dict:
    """Generate synthetic records + coastline consumable by `ingest`."""
    if not cfg.flow:
        raise ValidationError("synth requires the `flow` config key")
    if not cfg.domain:
        raise ValidationError("synth requires the `domain` config key")
    domain = tuple(float(x) for x in cfg.domain.split(","))
    if len(domain) != 4:
        raise ValidationError(f"domain needs 4 numbers, got {cfg.domain!r}")
    vortices = []
    for raw in (cfg.vortex1, cfg.vortex2):
        if raw:
            vals = [float(x) for x in raw.split(",")]
            if len(vals) != 6:
                raise ValidationError(f"vortex needs 6 numbers, got {raw!r}")
            vortices.append(Vortex(center=(vals[0], vals[1]),
                                   drift=(vals[2], vals[3]),
                                   radius=vals[4], omega=vals[5]))
    grid_shape = (cfg.grid_lon, cfg.grid_lat) if cfg.grid_lon and cfg.grid_lat else ()
    spec = FlowSpec(kind=cfg.flow, domain=domain, T=cfg.months,
                    seed_count=cfg.seed_count, seed=cfg.seed,
                    grid_shape=grid_shape, vortices=tuple(vortices),
                    start_month=cfg.start_month)
    traj = generate(spec)
    survivors = traj.n_floats
    if cfg.dropout:
        pmf = lifetime_pmf(cfg.months, cfg.dropout_full_fraction,
                           cfg.dropout_mean_short)
        traj = apply_dropout(traj, pmf, cfg.seed)
        survivors = survivors_full_span(traj)

    out = _out(cfg)
    from .ingest import trajectory_to_records
    day = max(1, min(cfg.day_window_first + 1, cfg.day_window_last))
    write_records_csv(trajectory_to_records(traj, day=day), out / "records.csv")
    if cfg.ring_lon and cfg.ring_lat:
        ring = boundary_ring(domain, cfg.ring_lon, cfg.ring_lat)
    else:
        raise ValidationError("synth requires ring_lon and ring_lat")
    with open(out / "coastline.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lon", "lat"])
        for lon, lat in ring.points:
            writer.writerow([repr(float(lon)), repr(float(lat))])
    return {"floats": traj.n_floats, "full_span_survivors": survivors}


def run_ingest(cfg: RunConfig) -> dict:
    records = parse_float_records(_records_path(cfg))
    traj = bin_monthly(records, cfg.start_month, cfg.months, cfg.day_window)
    coast = _load_coast(cfg)
    write_trajectory_csv(traj, _out(cfg) / "trajectory.csv")
    return {
        "records": len(records),
        "floats": traj.n_floats,
        "months": traj.n_months,
        "coastline_points": coast.n_points,
    }


def run_mesh(cfg: RunConfig) -> dict:
    traj = _load_traj(cfg)
    coast = _load_coast(cfg)
    mesh_dir = _out(cfg) / "mesh"
    mesh_dir.mkdir(exist_ok=True)

    def build(t):
        mesh = triangulate_slice(traj, t, coast)
        return filter_triangles(mesh, cfg.max_edge_km)

    months = range(1, cfg.months + 1)
    with ThreadPoolExecutor(max_workers=_pool_size(cfg)) as pool:
        meshes = list(pool.map(build, months))
    triangle_counts = []
    for t, mesh in zip(months, meshes):
        vp, tp = _mesh_paths(cfg, t)
        write_mesh_csv(mesh, vp, tp)
        triangle_counts.append(mesh.n_triangles)
    return {"months": cfg.months, "triangles_min": min(triangle_counts),
            "triangles_max": max(triangle_counts)}


def run_assemble(cfg: RunConfig) -> dict:
    traj = _load_traj(cfg)
    coast = _load_coast(cfg)
    n_global = traj.n_floats + coast.n_points

    def load_and_assemble(t):
        vp, tp = _mesh_paths(cfg, t)
        if not vp.exists():
            return zero_slice(n_global)
        mesh = read_mesh_csv(vp, tp, n_global)
        return assemble_slice(mesh)

    months = range(1, cfg.months + 1)
    _need(_mesh_paths(cfg, 1)[0], "assemble")
    with ThreadPoolExecutor(max_workers=_pool_size(cfg)) as pool:
        slices = list(pool.map(load_and_assemble, months))
    coast_range = range(traj.n_floats, n_global)
    system = average_system(slices, coast_range)

    sys_dir = _out(cfg) / "system"
    sys_dir.mkdir(exist_ok=True)
    write_matrix_coo(system.D_bar, sys_dir / "D_bar.txt")
    write_matrix_coo(system.M_bar, sys_dir / "M_bar.txt")
    np.savetxt(sys_dir / "free_indices.txt", system.free_indices, fmt="%d")
    meta = {
        "n_global": n_global,
        "floats": traj.n_floats,
        "coastline_points": coast.n_points,
        "months": system.T,
        "n_free": system.n_free,
    }
    (sys_dir / "system.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return meta


def _load_system(cfg: RunConfig) -> TimeAveragedSystem:
    meta = _system_meta(cfg)
    sys_dir = _out(cfg) / "system"
    n = meta["n_global"]
    D = read_matrix_coo(_need(sys_dir / "D_bar.txt", "solve"), n)
    M = read_matrix_coo(_need(sys_dir / "M_bar.txt", "solve"), n)
    free = np.loadtxt(sys_dir / "free_indices.txt", dtype=int).reshape(-1)
    return TimeAveragedSystem(D_bar=D, M_bar=M, free_indices=free,
                              T=meta["months"])


def run_solve(cfg: RunConfig) -> dict:
    system = _load_system(cfg)
    pairs = solve_leading(system, cfg.eigenpairs, tol=cfg.eigen_tol)
    eig_dir = _out(cfg) / "eigen"
    eig_dir.mkdir(exist_ok=True)
    write_eigen_csv(pairs, eig_dir / "eigenvalues.csv",
                    eig_dir / "eigenvectors.csv")
    return {"eigenvalues": [pair.eigenvalue for pair in pairs]}


def run_seba(cfg: RunConfig) -> dict:
    meta = _system_meta(cfg)
    n = meta["n_global"]
    eig_dir = _out(cfg) / "eigen"
    pairs = read_eigen_csv(_need(eig_dir / "eigenvalues.csv", "seba"),
                           _need(eig_dir / "eigenvectors.csv", "seba"), n)
    free = np.loadtxt(_out(cfg) / "system" / "free_indices.txt",
                      dtype=int).reshape(-1)
    U = np.column_stack([pair.coefficients[free] for pair in pairs])
    basis = seba_rotate(
        U,
        mu=cfg.seba_mu if cfg.seba_mu > 0 else None,
        tol=cfg.seba_tol,
        max_iter=cfg.seba_max_iter,
        restarts=cfg.seba_restarts,
        seed=cfg.seed,
        free_indices=free,
        dim=n,
    )
    seba_dir = _out(cfg) / "seba"
    seba_dir.mkdir(exist_ok=True)
    write_seba_csv(basis, seba_dir / "seba.csv")
    smax = max_combine(basis)
    with open(seba_dir / "smax.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["global_index", "value"])
        for g in np.nonzero(np.abs(smax) > 1e-12)[0]:
            writer.writerow([int(g), repr(float(smax[g]))])
    info = {
        "mu": basis.mu,
        "iterations": basis.iterations,
        "converged": bool(basis.converged),
        "rotation_change": basis.rotation_change,
        "span_residual": basis.span_residual,
        "support_fractions": [float(x) for x in basis.support_fractions()],
    }
    (seba_dir / "seba.json").write_text(
        json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return info


def run_sets(cfg: RunConfig) -> dict:
    meta = _system_meta(cfg)
    n = meta["n_global"]
    columns = read_seba_columns(_need(_out(cfg) / "seba" / "seba.csv", "sets"), n)
    coast = _load_coast(cfg)
    lon_min, lat_min = coast.points.min(axis=0)
    lon_max, lat_max = coast.points.max(axis=0)
    extent = (lon_min, lon_max, lat_min, lat_max)

    meshes = [_load_mesh(cfg, t, n) for t in range(1, cfg.months + 1)]
    sets_dir = _out(cfg) / "sets"
    sets_dir.mkdir(exist_ok=True)
    curves = []
    skipped = []
    for j in range(columns.shape[1]):
        fields_j = [
            grid_interpolate(columns[:, j], meshes[t - 1], cfg.grid_spacing_deg,
                             month=t, extent=extent)
            for t in range(1, cfg.months + 1)
        ]
        try:
            curve = optimize_threshold(fields_j, cfg.threshold_step, feature=j + 1)
        except NumericalError as exc:
            logger.warning("feature %d skipped: %s", j + 1, exc)
            skipped.append(j + 1)
            continue
        curves.append(curve)
        family = evolve_boundaries(fields_j, curve.c_min, feature=j + 1)
        write_family_geojson(family, sets_dir / f"feature_{j + 1:02d}.geojson")
    if curves:
        write_cheeger_csv(curves, sets_dir / "cheeger.csv")
    return {
        "features": columns.shape[1],
        "skipped": skipped,
        "c_min": {str(curve.feature): curve.c_min for curve in curves},
    }


def run_diag(cfg: RunConfig) -> dict:
    traj = _load_traj(cfg)
    stats = fleet_stats(traj)
    diag_dir = _out(cfg) / "diag"
    diag_dir.mkdir(exist_ok=True)
    write_active_csv(stats, diag_dir / "active_counts.csv")
    edges, counts = lifetime_histogram(traj)
    write_lifetimes_csv(edges, counts, diag_dir / "lifetimes.csv")
    write_rms_csv(traj, stats, diag_dir / "rms_speed.csv")

    display = cfg.display_month if cfg.display_month > 0 else max(1, cfg.months // 2)
    coast = _load_coast(cfg)
    mesh = _load_mesh(cfg, display, traj.n_floats + coast.n_points)
    field = rms_speed_field(traj, mesh)
    with open(diag_dir / "rms_field.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["global_index", "value"])
        for g in np.nonzero(field.coefficients)[0]:
            writer.writerow([int(g), repr(float(field.coefficients[g]))])
    return {"display_month": display, "active_total": int(stats.active.sum())}


STAGE_FUNCS = {
    "synth": run_synth,
    "ingest": run_ingest,
    "mesh": run_mesh,
    "assemble": run_assemble,
    "solve": run_solve,
    "seba": run_seba,
    "sets": run_sets,
    "diag": run_diag,
}


def _run_stage(cfg: RunConfig, name: str) -> dict:
    start = time.perf_counter()
    try:
        info = STAGE_FUNCS[name](cfg)
    except Exception as exc:
        marker = _out(cfg) / "FAILED"
        marker.write_text(f"{name}: {exc}\n", encoding="utf-8")
        if isinstance(exc, CohsetsError):
            raise type(exc)(f"stage {name}: {exc}") from exc
        raise
    info = dict(info)
    info["seconds"] = round(time.perf_counter() - start, 6)
    _update_manifest(cfg, f"stage_{name}", info)
    return info


def run_pipeline(cfg: RunConfig) -> dict:
    """Run every stage in order; synthetic input generation first if asked."""
    cfg.validate()
    out = _out(cfg)
    failed = out / "FAILED"
    if failed.exists():
        failed.unlink()
    results = {}
    stages = (["synth"] if cfg.flow else []) + STAGE_ORDER
    for name in stages:
        logger.info("stage %s", name)
        results[name] = _run_stage(cfg, name)
    return results


# ---------------------------------------------------------------------- CLI

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cohsets",
        description="Detect finite-time coherent sets from sparse float "
                    "trajectories.",
        epilog="Config precedence: defaults < config file < COHSETS_* "
               "environment variables < command-line flags.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = ["run"] + list(STAGE_FUNCS)
    for name in commands:
        p = sub.add_parser(name, help=f"run the {name} stage"
                           if name != "run" else "run the full pipeline")
        p.add_argument("--config", default=None, help="key=value config file")
        for f in fields(RunConfig):
            p.add_argument(f"--{f.name}", default=None, metavar="V",
                           help=f"override config key {f.name}")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(RunConfig)
        if getattr(args, f.name) is not None
    }
    try:
        cfg = load_config(args.config, overrides=overrides)
        if args.command == "run":
            run_pipeline(cfg)
        else:
            _run_stage(cfg, args.command)
    except CohsetsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
