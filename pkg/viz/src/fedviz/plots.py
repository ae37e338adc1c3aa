"""Publication-style figures from exported simulation run directories.

Input is the three-file contract a run directory carries:

    metrics.csv   round,node,accuracy,loss
    comm.csv      round,d2d,d2e,e2c
    run.json      config echo with the preset name

A directory holding run_* subdirectories (an experiment with repeats) is
expanded to its runs, which then share one curve/bar with a spread band.
Every plot function saves the image and returns the exact arrays it drew,
so tests and downstream tooling can verify figures without pixel
comparisons.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["FigureSpec", "PlotDataError", "RunData", "read_run_dir",
           "collect_groups", "plot_accuracy", "plot_comm"]

LINKS = ("d2d", "d2e", "e2c")


class PlotDataError(ValueError):
    """Missing or malformed run-directory data; the message names the file."""


@dataclass(frozen=True)
class FigureSpec:
    """What to draw: run directories in, one image path out."""

    input_dirs: tuple[str, ...]
    kind: str                      # "accuracy_curves" | "comm_volume"
    output: str
    labels: tuple[str, ...] | None = None  # one per input dir; default from run.json

    def __post_init__(self) -> None:
        if not self.input_dirs:
            raise PlotDataError("need at least one run directory")
        if self.kind not in ("accuracy_curves", "comm_volume"):
            raise PlotDataError(f"unknown figure kind {self.kind!r}")
        if self.labels is not None and len(self.labels) != len(self.input_dirs):
            raise PlotDataError("labels must match input directories one-to-one")


@dataclass
class RunData:
    path: Path
    rounds: list[int]
    node_accuracy: dict[int, list[float]] = field(repr=False)  # round -> accuracies
    comm: dict[int, dict[str, int]] = field(repr=False)        # round -> link -> count
    preset: str = ""
    node_count: int = 0

    def mean_accuracy_per_round(self) -> np.ndarray:
        return np.array([np.mean(self.node_accuracy[r]) for r in self.rounds])

    def node_std_per_round(self) -> np.ndarray:
        return np.array([np.std(self.node_accuracy[r]) for r in self.rounds])

    def cumulative_comm(self) -> dict[str, int]:
        return {link: sum(counts[link] for counts in self.comm.values()) for link in LINKS}


def _parse_csv(path: Path, expected_header: str) -> list[list[str]]:
    if not path.exists():
        raise PlotDataError(f"{path}: file is missing")
    lines = path.read_text(encoding="utf-8").strip().split("\n")
    if not lines or lines[0] != expected_header:
        raise PlotDataError(f"{path}: expected header {expected_header!r}")
    return [line.split(",") for line in lines[1:] if line]


def read_run_dir(path: str | Path) -> RunData:
    """Parse one run directory into memory."""
    path = Path(path)
    node_accuracy: dict[int, list[float]] = {}
    node_ids: set[int] = set()
    for fields in _parse_csv(path / "metrics.csv", "round,node,accuracy,loss"):
        try:
            round_index, node, accuracy = int(fields[0]), int(fields[1]), float(fields[2])
        except (ValueError, IndexError) as err:
            raise PlotDataError(f"{path / 'metrics.csv'}: malformed row {fields!r}") from err
        node_accuracy.setdefault(round_index, []).append(accuracy)
        node_ids.add(node)
    if not node_accuracy:
        raise PlotDataError(f"{path / 'metrics.csv'}: no accuracy rows")

    comm: dict[int, dict[str, int]] = {}
    for fields in _parse_csv(path / "comm.csv", "round,d2d,d2e,e2c"):
        try:
            comm[int(fields[0])] = dict(zip(LINKS, (int(v) for v in fields[1:4])))
        except (ValueError, IndexError) as err:
            raise PlotDataError(f"{path / 'comm.csv'}: malformed row {fields!r}") from err

    preset = ""
    meta_path = path / "run.json"
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise PlotDataError(f"{meta_path}: invalid JSON") from err
        preset = meta.get("preset") or meta.get("config", {}).get("preset") or ""

    return RunData(path=path, rounds=sorted(node_accuracy), node_accuracy=node_accuracy,
                   comm=comm, preset=preset or path.name,
                   node_count=max(node_ids) + 1)


def _expand(path: Path) -> list[Path]:
    subruns = sorted(p for p in path.glob("run_*") if (p / "metrics.csv").exists())
    return subruns or [path]


def collect_groups(spec: FigureSpec) -> list[tuple[str, list[RunData]]]:
    """One (label, runs) group per input directory, repeats expanded."""
    groups = []
    for i, raw in enumerate(spec.input_dirs):
        runs = [read_run_dir(p) for p in _expand(Path(raw))]
        label = spec.labels[i] if spec.labels else runs[0].preset
        groups.append((label, runs))
    return groups


def plot_accuracy(spec: FigureSpec) -> dict:
    """Mean node accuracy per round, one curve per group, spread shaded.

    With several repeats the band is the across-run std of the per-round
    means; a single run falls back to the across-node std.  Returns the
    plotted arrays keyed by label.
    """
    groups = collect_groups(spec)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    drawn: dict[str, dict] = {}
    for label, runs in groups:
        rounds = runs[0].rounds
        for other in runs[1:]:
            if other.rounds != rounds:
                raise PlotDataError(f"{other.path}: rounds disagree within group {label!r}")
        means = np.vstack([r.mean_accuracy_per_round() for r in runs])
        curve = means.mean(axis=0)
        band = means.std(axis=0) if len(runs) > 1 else runs[0].node_std_per_round()
        ax.plot(rounds, curve, label=label)
        ax.fill_between(rounds, curve - band, curve + band, alpha=0.2)
        drawn[label] = {"rounds": list(rounds), "mean": curve.tolist(),
                        "band": band.tolist()}
    ax.set_xlabel("aggregation round")
    ax.set_ylabel("mean test accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(spec.output, dpi=150)
    plt.close(fig)
    return {"kind": "accuracy_curves", "output": spec.output, "series": drawn}


def plot_comm(spec: FigureSpec) -> dict:
    """Stacked per-node message volume per group with final accuracy overlay.

    Bars stack cumulative d2d/d2e/e2c totals normalized by node count
    (averaged over repeats); the right axis marks each group's final-round
    mean accuracy.  Returns the plotted arrays.
    """
    groups = collect_groups(spec)
    labels: list[str] = []
    segments: dict[str, list[float]] = {link: [] for link in LINKS}
    final_accuracy: list[float] = []
    for label, runs in groups:
        if all(not r.comm for r in runs):
            raise PlotDataError(f"{runs[0].path / 'comm.csv'}: no communication rows")
        labels.append(label)
        for link in LINKS:
            per_node = [r.cumulative_comm()[link] / r.node_count for r in runs]
            segments[link].append(float(np.mean(per_node)))
        final_accuracy.append(float(np.mean([r.mean_accuracy_per_round()[-1] for r in runs])))

    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(7.5, 4.5))
    bottom = np.zeros(len(labels))
    for link in LINKS:
        heights = np.array(segments[link])
        ax.bar(x, heights, bottom=bottom, label=link.upper())
        bottom += heights
    ax.set_xticks(x, labels, rotation=30, ha="right")
    ax.set_ylabel("messages per node (cumulative)")
    overlay = ax.twinx()
    overlay.plot(x, final_accuracy, "k_", markersize=14, label="final accuracy")
    overlay.set_ylabel("final mean accuracy")
    overlay.set_ylim(0.0, 1.0)
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(spec.output, dpi=150)
    plt.close(fig)
    return {"kind": "comm_volume", "output": spec.output, "labels": labels,
            "segments": segments, "final_accuracy": final_accuracy}
