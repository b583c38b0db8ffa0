"""Robustness-curve figures rendered from abstraction-error result CSVs."""

from diroca_figures.figures import (
    FigureSpec,
    MissingCellError,
    aggregate,
    plot_robustness,
    read_rows,
)

__all__ = [
    "FigureSpec",
    "MissingCellError",
    "aggregate",
    "plot_robustness",
    "read_rows",
]
