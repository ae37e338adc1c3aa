"""Figures from fedsim run directories: accuracy curves and communication volume."""

from .plots import (
    FigureSpec,
    PlotDataError,
    RunData,
    collect_groups,
    plot_accuracy,
    plot_comm,
    read_run_dir,
)

__version__ = "0.1.0"

__all__ = ["FigureSpec", "PlotDataError", "RunData", "collect_groups",
           "plot_accuracy", "plot_comm", "read_run_dir"]
