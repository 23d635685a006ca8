#!/usr/bin/env python3
"""Static figures of sweep reports and run snapshots using Matplotlib.

Usage:
    # Log-log convergence figure of an eps-sweep report
    python plot_sweep.py results/sweep/report.csv -o convergence.png

    # Profiles of every field in a snapshot file
    python plot_sweep.py --profile results/run/snapshot_00010.csv -o profile.png
"""

import argparse
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from analysis import CHANNELS, channel_floor, fit_channel  # noqa: E402
from errors import FitError  # noqa: E402
from run_config import load_settings, setup_logging  # noqa: E402
from simulate import COORDINATES, read_snapshot  # noqa: E402

logger = logging.getLogger(__name__)


def _figure(plot_config: dict):
    fig_size = plot_config.get("figure_size", {})
    return plt.subplots(figsize=(fig_size.get("width", 7), fig_size.get("height", 5)))


def plot_convergence(
    report: pd.DataFrame | str | Path,
    out_filename: str | Path,
    config: dict,
    error_floor: float = 1e-10,
) -> dict[str, float]:
    """Plot every error channel against eps on log-log axes with its fitted slope.

    Args:
        report: Sweep report frame, or the path of a report CSV
        out_filename: Output image filename
        config: Settings dictionary (``plot`` section)
        error_floor: Channels with an error at or below this are drawn but not fitted

    Returns:
        Fitted order per channel (nan when below floor)
    """
    frame = pd.read_csv(report) if isinstance(report, str | Path) else report
    plot_config = config.get("plot", {})
    line_width = plot_config.get("line_width", 1.5)
    marker_size = plot_config.get("marker_size", 6)

    eps = frame["eps"].to_numpy()
    orders = {}
    fig, ax = _figure(plot_config)
    channels = [c for c in (*CHANNELS, "final_grad_w_minus_v_sq") if c in frame.columns]
    for channel in channels:
        errors = frame[channel].to_numpy()
        rows = list(zip(eps, errors, strict=True))
        try:
            fit = fit_channel(channel, rows, error_floor)
        except FitError as err:
            logger.warning(f"{channel}: no fit ({err})")
            orders[channel] = float("nan")
            continue
        orders[channel] = fit.order
        label = f"{channel} (below floor)" if np.isnan(fit.order) else f"{channel}: {fit.order:.2f}"
        shown = np.maximum(errors, channel_floor(channel, error_floor))
        (line,) = ax.loglog(eps, shown, "o-", lw=line_width, ms=marker_size, label=label)
        if not np.isnan(fit.order):
            ax.loglog(
                eps, fit.constant * eps**fit.order, "--", color=line.get_color(), lw=line_width / 2
            )

    reference = frame[channels[0]].iloc[0] if channels else 0.0
    if reference > error_floor:
        ax.loglog(eps, reference * eps / eps[0], ":", color="gray", label="first order")
    ax.set_xlabel("eps")
    ax.set_ylabel("error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize="small")

    dpi = plot_config.get("dpi", 150)
    logger.info(f"Saving convergence plot to {out_filename}")
    fig.savefig(out_filename, format="png", bbox_inches="tight", dpi=dpi)
    plt.close(fig)
    return orders


def plot_profiles(snapshot: str | Path, out_filename: str | Path, config: dict) -> None:
    """Plot the fields of a 1D snapshot against x, or the first field of a 2D one as an image."""
    header, frame = read_snapshot(Path(snapshot))
    plot_config = config.get("plot", {})
    fields = [c for c in frame.columns if c not in COORDINATES]

    fig, ax = _figure(plot_config)
    if "y" in frame.columns:
        nx = frame["x"].nunique()
        ny = frame["y"].nunique()
        image = frame[fields[0]].to_numpy().reshape(ny, nx)
        # centres span [h/2, L - h/2]
        extent = (0, frame["x"].max() + frame["x"].min(), 0, frame["y"].max() + frame["y"].min())
        mesh = ax.imshow(image, origin="lower", extent=extent, aspect="auto")
        fig.colorbar(mesh, ax=ax, label=fields[0])
        ax.set_ylabel("y")
    else:
        for name in fields:
            ax.plot(frame["x"], frame[name], lw=plot_config.get("line_width", 1.5), label=name)
        ax.legend()
    ax.set_xlabel("x")
    ax.set_title(f"t = {header.get('time', '?')}")

    logger.info(f"Saving profile plot to {out_filename}")
    fig.savefig(out_filename, format="png", bbox_inches="tight", dpi=plot_config.get("dpi", 150))
    plt.close(fig)


def main() -> None:
    """Main entry point with CLI argument parsing."""
    parser = argparse.ArgumentParser(description="Plot eps-sweep reports and run snapshots")
    parser.add_argument("report", nargs="?", type=Path, help="Sweep report CSV")
    parser.add_argument("--profile", type=Path, help="Snapshot CSV to draw instead of a report")
    parser.add_argument("-o", "--output", type=Path, help="Output PNG file")
    parser.add_argument(
        "-s", "--settings", type=Path, help="Settings YAML file (default: config.yaml)"
    )
    parser.add_argument("--dpi", type=int, help="Output image DPI")
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose output")

    args = parser.parse_args()

    config = load_settings(args.settings)
    if args.verbose:
        config.setdefault("logging", {})["level"] = "DEBUG"
    setup_logging(config)
    if args.dpi:
        config.setdefault("plot", {})["dpi"] = args.dpi

    if args.profile:
        plot_profiles(args.profile, args.output or Path("profile.png"), config)
    elif args.report:
        orders = plot_convergence(args.report, args.output or Path("convergence.png"), config)
        for channel, order in orders.items():
            logger.info(f"{channel}: order {order:.3f}")
    else:
        parser.error("give a report CSV or --profile SNAPSHOT")


if __name__ == "__main__":
    main()
