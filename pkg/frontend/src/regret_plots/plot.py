"""Mean-line / std-band figures from experiment aggregate CSVs.

Each input CSV carries one algorithm's across-seed summary with columns
t, mean_<metric>, std_<metric>.  One line plus one shaded band is drawn per
file, labeled by the file stem; every file must share the same t grid.
Rendering never mutates the inputs, and the plotted arrays are exactly the
parsed CSV columns, so figures are reproducible and introspectable.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import click  # noqa: E402
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


class PlotInputError(ValueError):
    """Missing columns, mismatched grids, or unreadable input files."""


@dataclass
class PlotSpec:
    csv_paths: Sequence[str]
    metric: str = "cum_regret"
    out_path: str = "regret.png"
    title: Optional[str] = None
    band: bool = True
    xlabel: str = "t"
    series: list = field(default_factory=list, repr=False)  # filled by plot_regret


def _read_series(path: str, metric: str):
    mean_col = f"mean_{metric}"
    std_col = f"std_{metric}"
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PlotInputError(f"{path}: empty file")
        for col in ("t", mean_col, std_col):
            if col not in reader.fieldnames:
                raise PlotInputError(f"{path}: missing column {col!r}")
        t, mean, std = [], [], []
        for row in reader:
            t.append(float(row["t"]))
            mean.append(float(row[mean_col]))
            std.append(float(row[std_col]))
    if not t:
        raise PlotInputError(f"{path}: no data rows")
    return np.asarray(t), np.asarray(mean), np.asarray(std)


def _color_for(label: str) -> tuple[float, float, float]:
    # deterministic per algorithm name, independent of file order
    digest = hashlib.sha256(label.encode()).digest()
    hue = digest[0] / 255.0
    import colorsys
    return colorsys.hsv_to_rgb(hue, 0.72, 0.82)


def plot_regret(spec: PlotSpec):
    """Render the figure described by spec and write it to spec.out_path.

    Returns the matplotlib Figure; line data can be pulled back out of it via
    ax.get_lines() and compared to the CSV columns.
    """
    if not spec.csv_paths:
        raise PlotInputError("no input CSV files given")
    series = []
    grid = None
    for path in spec.csv_paths:
        t, mean, std = _read_series(path, spec.metric)
        if grid is None:
            grid = t
        elif len(grid) != len(t) or not np.array_equal(grid, t):
            raise PlotInputError(f"{path}: t grid disagrees with "
                                 f"{spec.csv_paths[0]}")
        series.append((Path(path).stem, t, mean, std))
    spec.series = series

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for label, t, mean, std in series:
        color = _color_for(label)
        ax.plot(t, mean, label=label, color=color, linewidth=1.8)
        if spec.band:
            ax.fill_between(t, mean - std, mean + std, color=color, alpha=0.25,
                            linewidth=0)
    ax.set_xlabel(spec.xlabel)
    ax.set_ylabel(spec.metric)
    if spec.title:
        ax.set_title(spec.title)
    ax.legend()
    fig.tight_layout()
    out = Path(spec.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out)
    return fig


@click.command()
@click.option("--csv", "csv_paths", multiple=True, required=True,
              type=click.Path(exists=True),
              help="aggregate CSV; repeat the flag or list files after it")
@click.argument("more_csvs", nargs=-1, type=click.Path(exists=True))
@click.option("--metric", default="cum_regret", show_default=True,
              help="metric name; columns mean_<metric>/std_<metric> must exist")
@click.option("--out", "out_path", default="regret.png", show_default=True,
              help="output image (.png or .svg)")
@click.option("--title", default=None)
@click.option("--band/--no-band", default=True, show_default=True,
              help="draw the std band")
def main(csv_paths, more_csvs, metric, out_path, title, band):
    """Plot mean lines with std bands from experiment aggregate CSVs."""
    spec = PlotSpec(csv_paths=list(csv_paths) + list(more_csvs), metric=metric,
                    out_path=out_path, title=title, band=band)
    try:
        plot_regret(spec)
    except PlotInputError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
