"""Render publication-style panels from mfl-minimax run directories.

Expected inputs (produced by the ``mfl-minimax`` CLI):

* comparison layout: ``<in>/mfl-ag/``, ``<in>/mfl-abr/``, ``<in>/mfl-da/``
  each holding ``snapshots.csv`` (epoch,player,index,x0) and
  ``convergence.csv`` (epoch,w1_mu,w1_nu), plus a top-level ``ni.csv``
  (epoch,ni_ag,ni_abr,ni_da);
* single-run layout: the same files directly in ``<in>`` (``ni.csv`` with
  columns epoch,ni), which supports panels a/d/e only.

Panels: (a)-(c) kernel-density evolution of the min and max clouds per
snapshot epoch for each algorithm, colored on a shared epoch scale;
(d) per-epoch W1 step distance (summed over both players, one curve per
algorithm, log scale); (e) the 3-point NI comparison over checkpoints.

Rendering is a pure function of the CSV content: fixed figure geometry,
colormaps, and PNG output with no timestamps, so identical inputs give
identical bytes on one platform.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

__all__ = ["PlotSpec", "PlotInputError", "render", "main"]

ALGORITHMS = ("mfl-ag", "mfl-abr", "mfl-da")
DENSITY_PANELS = {"a": "mfl-ag", "b": "mfl-abr", "c": "mfl-da"}
ALL_PANELS = ("a", "b", "c", "d", "e")

_SNAPSHOT_COLUMNS = ["epoch", "player", "index", "x0"]
_CONVERGENCE_COLUMNS = ["epoch", "w1_mu", "w1_nu"]


class PlotInputError(RuntimeError):
    """A required CSV is missing or does not match the documented schema."""


@dataclass(frozen=True)
class PlotSpec:
    """What to render: input run directory, panel selection, output directory."""

    input_dir: Path
    output_dir: Path
    panels: Tuple[str, ...] = ALL_PANELS

    def __post_init__(self):
        object.__setattr__(self, "input_dir", Path(self.input_dir))
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        bad = [p for p in self.panels if p not in ALL_PANELS]
        if bad:
            raise ValueError(f"unknown panels {bad}; choose from {ALL_PANELS}")
        if not self.panels:
            raise ValueError("no panels selected")


def _load_csv(path: Path, required: Iterable[str]) -> pd.DataFrame:
    if not path.is_file():
        raise PlotInputError(f"missing input file: {path}")
    try:
        frame = pd.read_csv(path)
    except Exception as exc:
        raise PlotInputError(f"unreadable CSV {path}: {exc}") from exc
    missing = [col for col in required if col not in frame.columns]
    if missing:
        raise PlotInputError(f"{path} lacks required columns {missing}")
    if frame.empty:
        raise PlotInputError(f"{path} contains no data rows")
    if frame[list(required)].isna().any().any():
        raise PlotInputError(f"{path} has incomplete rows (truncated file?)")
    return frame


def _run_dir(spec: PlotSpec, algorithm: str) -> Path:
    sub = spec.input_dir / algorithm
    if sub.is_dir():
        return sub
    if (spec.input_dir / "snapshots.csv").is_file():
        return spec.input_dir  # single-run layout
    raise PlotInputError(
        f"missing input file: {sub / 'snapshots.csv'} (no comparison subdirectory "
        f"and no single-run snapshots.csv in {spec.input_dir})"
    )


def _silverman_kde(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Gaussian KDE at 1.06 * sigma * n**(-1/5), matching the estimator the
    solver uses for its KL terms, so the plotted densities agree with the
    metrics' view of the data."""
    n = values.size
    sigma = float(np.std(values, ddof=1)) if n > 1 else 0.0
    if sigma == 0.0:
        sigma = max(abs(float(values[0])), 1.0) * 1e-3
    h = 1.06 * sigma * n ** (-0.2)
    z = (grid[:, None] - values[None, :]) / h
    return np.exp(-0.5 * z * z).sum(axis=1) / (n * h * np.sqrt(2.0 * np.pi))


def _render_density(spec: PlotSpec, panel: str, algorithm: str) -> Path:
    run = _run_dir(spec, algorithm)
    snaps = _load_csv(run / "snapshots.csv", _SNAPSHOT_COLUMNS)
    epochs = np.sort(snaps["epoch"].unique())
    lo = float(snaps["x0"].min()) - 1.0
    hi = float(snaps["x0"].max()) + 1.0
    grid = np.linspace(lo, hi, 512)

    cmap = plt.get_cmap("viridis")
    norm = matplotlib.colors.Normalize(vmin=float(epochs.min()),
                                       vmax=float(epochs.max()) or 1.0)
    fig, axes = plt.subplots(2, 1, figsize=(6.0, 5.0), sharex=True)
    for ax, player, label in zip(axes, ("mu", "nu"), ("min player", "max player")):
        for epoch in epochs:
            sel = snaps[(snaps["epoch"] == epoch) & (snaps["player"] == player)]
            if sel.empty:
                raise PlotInputError(
                    f"{run / 'snapshots.csv'} has no rows for player {player!r} "
                    f"at epoch {epoch}")
            dens = _silverman_kde(sel["x0"].to_numpy(), grid)
            ax.plot(grid, dens, color=cmap(norm(float(epoch))), linewidth=1.1)
        ax.set_ylabel(f"{label} density")
    axes[1].set_xlabel("position")
    fig.colorbar(matplotlib.cm.ScalarMappable(norm=norm, cmap=cmap),
                 ax=axes, label="epoch")
    fig.suptitle(f"({panel}) {algorithm} density evolution")
    out = spec.output_dir / f"panel_{panel}_{algorithm}_density.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def _render_convergence(spec: PlotSpec) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    plotted = False
    for algorithm in ALGORITHMS:
        sub = spec.input_dir / algorithm
        if not sub.is_dir():
            continue
        conv = _load_csv(sub / "convergence.csv", _CONVERGENCE_COLUMNS)
        total = conv["w1_mu"] + conv["w1_nu"]
        ax.plot(conv["epoch"], total, label=algorithm, linewidth=1.2)
        plotted = True
    if not plotted:
        conv = _load_csv(spec.input_dir / "convergence.csv", _CONVERGENCE_COLUMNS)
        ax.plot(conv["epoch"], conv["w1_mu"] + conv["w1_nu"], label="run", linewidth=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("W1 step distance (both players)")
    ax.legend()
    ax.set_title("(d) convergence speed")
    out = spec.output_dir / "panel_d_convergence.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def _render_ni(spec: PlotSpec) -> Path:
    path = spec.input_dir / "ni.csv"
    frame = _load_csv(path, ["epoch"])
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    series = [c for c in frame.columns if c != "epoch"]
    if not series:
        raise PlotInputError(f"{path} holds no NI columns")
    labels = {"ni_ag": "mfl-ag", "ni_abr": "mfl-abr", "ni_da": "mfl-da", "ni": "run"}
    for col in series:
        if frame[col].isna().any():
            raise PlotInputError(f"{path} has incomplete rows (truncated file?)")
        ax.plot(frame["epoch"], frame[col], marker="o", markersize=3,
                linewidth=1.2, label=labels.get(col, col))
    ax.set_xlabel("epoch")
    ax.set_ylabel("3-point NI error" if len(series) > 1 else "quadrature NI")
    ax.legend()
    ax.set_title("(e) relative optimality")
    out = spec.output_dir / "panel_e_ni.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render(spec: PlotSpec) -> List[Path]:
    """Render the selected panels; returns the written image paths."""
    spec.output_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for panel in spec.panels:
        if panel in DENSITY_PANELS:
            written.append(_render_density(spec, panel, DENSITY_PANELS[panel]))
        elif panel == "d":
            written.append(_render_convergence(spec))
        else:
            written.append(_render_ni(spec))
    return written


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfl-minimax-plots",
        description="Render figure panels from mfl-minimax CSV artifacts.",
    )
    parser.add_argument("--in", dest="input_dir", required=True,
                        help="run directory holding the CSV artifacts")
    parser.add_argument("--out", dest="output_dir", required=True,
                        help="directory for the rendered images")
    parser.add_argument("--panels", default=",".join(ALL_PANELS),
                        help="comma-separated subset of a,b,c,d,e")
    args = parser.parse_args(argv)
    panels = tuple(p.strip() for p in args.panels.split(",") if p.strip())
    try:
        spec = PlotSpec(input_dir=args.input_dir, output_dir=args.output_dir,
                        panels=panels)
        written = render(spec)
    except (PlotInputError, ValueError) as exc:
        print(f"plot error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
