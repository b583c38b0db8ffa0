"""Error-vs-x robustness curves with machine-readable sidecar data files.

The input is the results CSV emitted by the evaluation pipeline, one row per
scored cell with the header
``method,eps_low,eps_high,fold,alpha,sigma,noise_kind,seed,error``. Plotting
is read-only: the curves are a pure aggregation (mean and standard deviation
over folds and samples) of those rows, and every plotted number is written to
a per-panel sidecar CSV so tests can assert on data instead of pixels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RESULT_HEADER = "method,eps_low,eps_high,fold,alpha,sigma,noise_kind,seed,error"
SIDECAR_HEADER = "method,x,mean,std,count"

# The x-axis names map onto result columns: the misspecification sweeps
# reuse the sigma column for their own knob and tag the noise kind.
_X_AXES = {
    "alpha": ("alpha", None),
    "sigma": ("sigma", None),
    "k": ("sigma", "fmisspec_"),
    "n_misalign": ("sigma", "omisspec_"),
}


class MissingCellError(ValueError):
    """A requested (method, x) cell has no rows in the input."""


@dataclass(frozen=True)
class FigureSpec:
    """One figure: a panel per labelled input CSV, curves grouped by method.

    ``inputs`` maps a panel label (for example "gaussian/slc") to a results
    CSV path. ``methods`` optionally restricts and orders the curves; every
    listed method must then have rows at every x value. ``where`` filters
    rows by exact column value before aggregation (for example fixing sigma
    while sweeping alpha).
    """

    inputs: tuple[tuple[str, str], ...]
    x: str
    output: str
    sidecar_dir: str
    methods: tuple[str, ...] = ()
    where: tuple[tuple[str, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.x not in _X_AXES:
            raise ValueError(f"unknown x axis {self.x!r}, "
                             f"expected one of {sorted(_X_AXES)}")
        if not self.inputs:
            raise ValueError("at least one input CSV is required")


def read_rows(path: str | Path) -> list[dict]:
    """Parse a results CSV into typed row dicts, validating the header."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_HEADER.split(","):
            raise ValueError(f"unexpected results header in {path}")
        rows = []
        for row in reader:
            rows.append({
                "method": row["method"],
                "fold": int(row["fold"]),
                "alpha": float(row["alpha"]),
                "sigma": float(row["sigma"]),
                "noise_kind": row["noise_kind"],
                "error": float(row["error"]),
            })
    return rows


def _mean_std(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def aggregate(rows: list[dict], spec: FigureSpec
              ) -> dict[str, list[tuple[float, float, float, int]]]:
    """Per-method curves: sorted (x, mean, std, count) tuples.

    Mean and std are taken over every row that lands in the (method, x)
    cell, which pools folds and repeated scoring draws.
    """
    column, kind_prefix = _X_AXES[spec.x]
    cells: dict[tuple[str, float], list[float]] = {}
    for row in rows:
        if kind_prefix is not None and not row["noise_kind"].startswith(kind_prefix):
            continue
        if any(row[col] != val for col, val in spec.where):
            continue
        if spec.methods and row["method"] not in spec.methods:
            continue
        cells.setdefault((row["method"], row[column]), []).append(row["error"])

    methods = list(spec.methods) or sorted({m for m, _ in cells})
    xs = sorted({x for _, x in cells})
    missing = [(m, x) for m in methods for x in xs if (m, x) not in cells]
    if missing:
        raise MissingCellError(f"missing cells: {missing}")

    curves: dict[str, list[tuple[float, float, float, int]]] = {}
    for m in methods:
        pts = []
        for x in xs:
            values = cells[(m, x)]
            mean, std = _mean_std(values)
            pts.append((x, mean, std, len(values)))
        curves[m] = pts
    return curves


def _write_sidecar(path: Path, curves: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SIDECAR_HEADER.split(","))
        for method, pts in curves.items():
            for x, mean, std, count in pts:
                writer.writerow([
                    method, f"{x:.12g}", f"{mean:.17g}", f"{std:.17g}", count
                ])


def plot_robustness(spec: FigureSpec) -> tuple[Path, dict[str, Path]]:
    """Render the figure and write one sidecar CSV per panel.

    Returns the image path and a mapping from panel label to sidecar path.
    The sidecar holds the exact plotted numbers.
    """
    sidecar_dir = Path(spec.sidecar_dir)
    sidecar_dir.mkdir(parents=True, exist_ok=True)
    panels = [(label, aggregate(read_rows(path), spec))
              for label, path in spec.inputs]

    fig, axes = plt.subplots(
        1, len(panels), figsize=(5.0 * len(panels), 3.8), squeeze=False
    )
    sidecars: dict[str, Path] = {}
    for ax, (label, curves) in zip(axes[0], panels):
        for method, pts in curves.items():
            xs = [p[0] for p in pts]
            means = [p[1] for p in pts]
            stds = [p[2] for p in pts]
            ax.plot(xs, means, marker="o", label=method)
            ax.fill_between(
                xs,
                [m - s for m, s in zip(means, stds)],
                [m + s for m, s in zip(means, stds)],
                alpha=0.2,
            )
        ax.set_title(label)
        ax.set_xlabel(spec.x)
        ax.set_ylabel("abstraction error")
        ax.legend()
        sidecar = sidecar_dir / f"sidecar_{label.replace('/', '_')}.csv"
        _write_sidecar(sidecar, curves)
        sidecars[label] = sidecar

    output = Path(spec.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(output, dpi=120)
    plt.close(fig)
    return output, sidecars
