#!/usr/bin/env python3
"""
Command-line front end: single runs, eps-sweeps, manufactured-solution checks and
snapshot comparison.

Usage:
    # Relaxed or limit run as configured
    python simulate.py run --config configs/competition_run.cfg

    # eps-sweep with convergence report and plot
    python simulate.py sweep --config configs/competition_sweep.cfg --plot

    # Manufactured-solution refinement ladder
    python simulate.py mms --config configs/mms_competition.cfg

    # Golden-file regression on two snapshot files
    python simulate.py compare results/a/snapshot_00010.csv results/b/snapshot_00010.csv --tol 1e-12

Exit status: 0 success (including runs whose invariant monitor reports
violations), 1 failed comparison, 2 configuration error, 3 solver error,
4 blow-up, 5 I/O error.
"""

import argparse
import logging
import math
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from analysis import InvariantReport, SweepReport, epsilon_sweep, monitor_invariants
from errors import ConfigError, GridMismatchError, SimulationError
from integrator import Trajectory, solve
from mesh_fields import State
from mms import MMSReport, run_mms
from models import InitialData, build_initial_data
from run_config import (
    RunConfig,
    config_digest,
    load_config_file,
    load_settings,
    serialize_config,
    setup_logging,
)

logger = logging.getLogger(__name__)

EXIT_CODES = {"config": 2, "solver": 3, "blowup": 4, "io": 5}
COMPARE_FAILED = 1
FLOAT_FORMAT = "%.17g"
COORDINATES = ("x", "y")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float | np.floating):
        return FLOAT_FORMAT % value
    return str(value)


def initial_data_for(cfg: RunConfig) -> InitialData:
    return build_initial_data(cfg.ic, cfg.grid, cfg.compatibility, cfg.params, cfg.w_init)


def snapshot_frame(state: State, species: tuple[str, str, str]) -> pd.DataFrame:
    """Columns ``x[, y]`` followed by the species present in ``state``."""
    grid = state.grid
    columns = {
        name: coords.ravel() for name, coords in zip(COORDINATES, grid.cell_centers(), strict=False)
    }
    for (_, f), name in zip(state.fields().items(), species, strict=False):
        columns[name] = f.values.ravel()
    return pd.DataFrame(columns)


def write_snapshot(
    path: Path, state: State, species: tuple[str, str, str], digest: str, model: str
) -> None:
    """Write one snapshot as comma-separated columns under ``#`` header lines."""
    created = datetime.now(timezone.utc).isoformat(timespec="seconds")
    header = [
        f"# time = {_fmt(float(state.time))}",
        f"# grid = {state.grid.describe()}",
        f"# digest = {digest}",
        f"# model = {model}",
        f"# created = {created}",
    ]
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("\n".join(header) + "\n")
        snapshot_frame(state, species).to_csv(f, index=False, float_format=FLOAT_FORMAT)


def read_snapshot(path: Path) -> tuple[dict[str, str], pd.DataFrame]:
    """Header entries and data columns of a snapshot file."""
    header = {}
    skip = 0
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition("=")
            header[key.strip()] = value.strip()
            skip += 1
    return header, pd.read_csv(path, skiprows=skip, float_precision="round_trip")


def diagnostics_frame(traj: Trajectory, species: tuple[str, str, str]) -> pd.DataFrame:
    """Per-step diagnostics with generic column suffixes renamed to species names."""
    frame = traj.diagnostics_frame().rename(columns={"time": "t"})
    renames = {}
    for generic, name in zip(("u", "v", "w"), species, strict=True):
        for column in frame.columns:
            if column.endswith(f"_{generic}"):
                renames[column] = column[: -len(generic)] + name
    frame = frame.rename(columns=renames)
    if traj.model == "limit":
        dropped = [c for c in frame.columns if c.endswith("_w") or c == "grad_gap"]
        frame = frame.drop(columns=dropped)
    return frame


def write_trajectory(out_dir: Path, traj: Trajectory, digest: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    species = traj.params.species
    for index, state in enumerate(traj.snapshots):
        write_snapshot(out_dir / f"snapshot_{index:05d}.csv", state, species, digest, traj.model)
    diagnostics_frame(traj, species).to_csv(
        out_dir / "diagnostics.csv", index=False, float_format=FLOAT_FORMAT
    )
    logger.info(f"Wrote {len(traj.snapshots)} snapshots and diagnostics to {out_dir}")


def write_summary(path: Path, items: dict[str, object]) -> None:
    """Machine-readable ``key = value`` summary."""
    with open(path, "w", encoding="utf-8") as f:
        for key, value in items.items():
            f.write(f"{key} = {_fmt(value)}\n")


def invariant_items(report: InvariantReport, prefix: str = "") -> dict[str, object]:
    items: dict[str, object] = {
        f"{prefix}invariants": "passed" if report.passed else "failed",
        f"{prefix}violations": len(report.violations),
    }
    for name, value in report.min_values.items():
        items[f"{prefix}min_{name}"] = value
    for name, value in report.sup_l1.items():
        items[f"{prefix}sup_l1_{name}"] = value
        items[f"{prefix}bound_l1_{name}"] = report.l1_bounds[name]
    items[f"{prefix}sup_linf_v"] = report.sup_linf_v
    items[f"{prefix}v_inf_bar"] = report.v_inf_bar
    if report.sup_linf_w is not None:
        items[f"{prefix}sup_linf_w"] = report.sup_linf_w
    items[f"{prefix}window"] = report.window
    for name, value in report.window_sq.items():
        items[f"{prefix}window_sq_{name}"] = value
        items[f"{prefix}bound_window_sq_{name}"] = report.window_bounds[name]
    if report.mass is not None:
        items[f"{prefix}sup_mass"] = report.mass
        items[f"{prefix}bound_mass"] = report.mass_bound
    items[f"{prefix}sup_grad_sq_v"] = report.sup_grad_sq_v
    items[f"{prefix}final_grad_gap"] = report.grad_gap_curve[-1]
    for index, v in enumerate(report.violations, start=1):
        items[f"{prefix}violation.{index}"] = (
            f"{v.check} t={_fmt(v.time)} observed={_fmt(v.observed)} bound={_fmt(v.bound)}"
        )
    return items


def run_single(cfg: RunConfig, out_dir: Path, log_every: int = 0) -> str:
    """One relaxed or limit run; returns the summary status."""
    digest = config_digest(cfg)
    traj = solve(initial_data_for(cfg), cfg.params, cfg.time, cfg.variant, log_every=log_every)
    report = monitor_invariants(traj, cfg.params)
    write_trajectory(out_dir, traj, digest)

    status = "ok" if report.passed else "violations"
    items: dict[str, object] = {
        "status": status,
        "digest": digest,
        "model": cfg.model,
        "variant": cfg.variant,
        "t_end": float(traj.final.time),
        "steps": len(traj.diagnostics) - 1,
        "snapshots": len(traj.snapshots),
    }
    items.update(invariant_items(report))
    write_summary(out_dir / "summary.txt", items)
    return status


def sweep_items(report: SweepReport) -> dict[str, object]:
    items: dict[str, object] = {
        "status": "ok" if report.invariants_passed else "violations",
        "digest": report.digest,
        "dt": report.dt,
        "eps": ", ".join(_fmt(e) for e in report.eps_list),
    }
    for name, fit in report.fits.items():
        items[f"order.{name}"] = fit.order
        items[f"order_full.{name}"] = fit.full_order
        items[f"constant.{name}"] = fit.constant
        items[f"fit_status.{name}"] = fit.status
    items["order.final_grad_w_minus_v_sq"] = report.gap_fit.order
    items["order_full.final_grad_w_minus_v_sq"] = report.gap_fit.full_order
    items["fit_status.final_grad_w_minus_v_sq"] = report.gap_fit.status
    items["final_grad_w_minus_v_sq_monotone"] = report.gap_monotone
    for label, invariants in report.invariants.items():
        items.update(invariant_items(invariants, prefix=f"{label}."))
    return items


def run_sweep(
    cfg: RunConfig,
    out_dir: Path,
    log_every: int = 0,
    plot: bool = False,
    settings: dict | None = None,
) -> str:
    """eps-sweep with per-member directories, report CSV and summary."""
    if cfg.sweep is None:
        raise ConfigError("the configuration has no [sweep] section")
    digest = config_digest(cfg)
    report = epsilon_sweep(
        initial_data_for(cfg),
        cfg.params,
        cfg.time,
        cfg.sweep.eps,
        workers=cfg.sweep.workers,
        error_floor=cfg.sweep.error_floor,
        digest=digest,
        log_every=log_every,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    for label, traj in report.trajectories.items():
        write_trajectory(out_dir / label.replace("=", "_"), traj, digest)
    report.frame().to_csv(out_dir / "report.csv", index=False, float_format=FLOAT_FORMAT)
    items = sweep_items(report)
    write_summary(out_dir / "summary.txt", items)

    for name, fit in report.fits.items():
        logger.info(f"{name}: order {fit.order:.3f} ({fit.status})")
    if plot:
        from plot_sweep import plot_convergence

        plot_convergence(report.frame(), out_dir / "convergence.png", settings or {})
    return str(items["status"])


def run_manufactured(cfg: RunConfig, out_dir: Path) -> MMSReport:
    """Refinement ladder of the manufactured solution for the configured model."""
    if cfg.time.t_end <= 0:
        raise ConfigError("[time] t_end must be positive for a manufactured-solution run")
    if len(set(cfg.grid.length)) != 1:
        raise ConfigError("manufactured-solution runs need equal lengths along every axis")
    model = "limit" if cfg.variant == "limit" else "indirect"
    m = cfg.mms
    report = run_mms(
        cfg.params,
        model,
        dim=cfg.grid.dim,
        length=cfg.grid.length[0],
        t_end=cfg.time.t_end,
        levels=m.levels,
        n0=m.n0,
        dt0=m.dt0,
        refine=m.refine,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    report.frame().to_csv(out_dir / "mms.csv", index=False, float_format=FLOAT_FORMAT)
    items: dict[str, object] = {
        "status": "ok" if report.passed else "order below first",
        "digest": config_digest(cfg),
        "model": cfg.model,
        "variant": model,
    }
    for name, order in report.orders.items():
        items[f"order.{name}"] = order
    for name, order in report.finest_orders.items():
        items[f"order_finest.{name}"] = order
    write_summary(out_dir / "summary.txt", items)
    logger.info(f"Manufactured-solution orders: {report.orders}")
    return report


@dataclass(frozen=True)
class CompareResult:
    passed: bool
    tolerance: float
    max_diff: dict[str, float]
    worst_column: str
    worst_row: int
    worst_location: tuple[float, ...]


def compare(
    file_a: Path, file_b: Path, tolerance: float, columns: list[str] | None = None
) -> CompareResult:
    """Largest absolute difference per column of two snapshot files.

    Raises:
        GridMismatchError: if the files were sampled on different grids or lack a column.
        OSError: if a file cannot be read.
    """
    header_a, frame_a = read_snapshot(file_a)
    header_b, frame_b = read_snapshot(file_b)
    if header_a.get("grid") != header_b.get("grid") or len(frame_a) != len(frame_b):
        raise GridMismatchError(
            f"grids differ: {header_a.get('grid')!r} vs {header_b.get('grid')!r}"
        )
    coords = [c for c in COORDINATES if c in frame_a.columns]
    for c in coords:
        if c not in frame_b.columns or not np.array_equal(frame_a[c], frame_b[c]):
            raise GridMismatchError(f"cell coordinates {c} differ between the files")
    if header_a.get("time") != header_b.get("time"):
        logger.warning(
            f"comparing snapshots at different times "
            f"({header_a.get('time')} vs {header_b.get('time')})"
        )

    if columns is None:
        columns = [c for c in frame_a.columns if c not in coords and c in frame_b.columns]
    max_diff = {}
    worst = ("", -1, -math.inf)
    for column in columns:
        if column not in frame_a.columns or column not in frame_b.columns:
            raise GridMismatchError(f"column {column!r} is missing from one of the files")
        diff = np.abs(frame_a[column].to_numpy() - frame_b[column].to_numpy())
        row = int(np.argmax(diff)) if diff.size else 0
        max_diff[column] = float(diff[row]) if diff.size else 0.0
        if max_diff[column] > worst[2]:
            worst = (column, row, max_diff[column])
    location = tuple(float(frame_a[c].iloc[worst[1]]) for c in coords) if worst[1] >= 0 else ()
    passed = all(d <= tolerance for d in max_diff.values())
    return CompareResult(passed, tolerance, max_diff, worst[0], worst[1], location)


def output_directory(args: argparse.Namespace, cfg: RunConfig, settings: dict) -> Path:
    if args.out:
        return args.out
    if cfg.output:
        return Path(cfg.output)
    return Path(settings.get("output", {}).get("directory", "results"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Simulate indirect-taxis models and their fast-reaction limits",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Single run as configured (variant indirect or limit)
  taxis-sim run --config configs/competition_run.cfg --out results/run

  # eps-sweep with a convergence plot
  taxis-sim sweep --config configs/competition_sweep.cfg --plot

  # Manufactured-solution order check
  taxis-sim mms --config configs/mms_competition.cfg

  # Compare the u and v columns of two snapshots
  taxis-sim compare a.csv b.csv --tol 1e-7 --columns u v
        """,
    )
    parser.add_argument(
        "-s", "--settings", type=Path, help="Settings YAML file (default: config.yaml)"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose output")
    parser.add_argument("-q", "--quiet", action="store_true", help="Suppress progress output")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, text in (
        ("run", "Integrate one configured run"),
        ("sweep", "Run an eps-sweep and fit convergence orders"),
        ("mms", "Run the manufactured-solution refinement ladder"),
    ):
        sub = commands.add_parser(name, help=text)
        sub.add_argument("-c", "--config", type=Path, required=True, help="Run configuration file")
        sub.add_argument("-o", "--out", type=Path, help="Output directory (overrides [output])")
        if name == "sweep":
            sub.add_argument("--plot", action="store_true", help="Write convergence.png")

    cmp = commands.add_parser("compare", help="Compare two snapshot files")
    cmp.add_argument("file_a", type=Path)
    cmp.add_argument("file_b", type=Path)
    cmp.add_argument("--tol", type=float, default=0.0, help="Absolute tolerance (default: 0)")
    cmp.add_argument("--columns", nargs="+", help="Columns to compare (default: all fields)")
    return parser


def dispatch(args: argparse.Namespace, settings: dict) -> int:
    if args.command == "compare":
        result = compare(args.file_a, args.file_b, args.tol, args.columns)
        for column, diff in result.max_diff.items():
            print(f"{column}: max |diff| = {diff:.3e}")
        if result.passed:
            print(f"PASS (tol {args.tol:g})")
            return 0
        print(
            f"FAIL (tol {args.tol:g}): column {result.worst_column} row {result.worst_row} "
            f"at {result.worst_location}"
        )
        return COMPARE_FAILED

    cfg = load_config_file(args.config)
    out_dir = output_directory(args, cfg, settings)
    log_every = 0 if args.quiet else int(settings.get("progress", {}).get("log_every", 0))
    logger.info(f"Configuration {args.config} (digest {config_digest(cfg)}), output {out_dir}")

    if args.command == "mms" or (args.command == "run" and cfg.mms.enabled):
        report = run_manufactured(cfg, out_dir)
        status = "ok" if report.passed else "order below first"
    elif args.command == "sweep" or cfg.variant == "sweep":
        status = run_sweep(cfg, out_dir, log_every, getattr(args, "plot", False), settings)
    else:
        status = run_single(cfg, out_dir, log_every)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.cfg").write_text(serialize_config(cfg), encoding="utf-8")
    print(f"{args.command}: status {status}, artifacts in {out_dir}")
    return 0


def main(argv: list[str] | None = None) -> int:
    """Main entry point with CLI argument parsing."""
    args = build_parser().parse_args(argv)

    settings = load_settings(args.settings)
    if args.verbose:
        settings.setdefault("logging", {})["level"] = "DEBUG"
    elif args.quiet:
        settings.setdefault("logging", {})["level"] = "WARNING"
    setup_logging(settings)

    try:
        return dispatch(args, settings)
    except SimulationError as err:
        logger.error(f"{err.category} error: {err}")
        return EXIT_CODES[err.category]
    except OSError as err:
        logger.error(f"io error: {err}")
        return EXIT_CODES["io"]


if __name__ == "__main__":
    sys.exit(main())
