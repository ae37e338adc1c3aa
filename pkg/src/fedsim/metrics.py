"""Per-round accuracy/loss rows and per-link message counters.

One MetricsLog instance collects everything a run produces; export()
writes the three-file contract (metrics.csv, comm.csv, run.json) that
downstream analysis and plotting consume.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["LINK_TYPES", "MetricsLog", "SummaryRow", "summarize", "export"]

LINK_TYPES = ("d2d", "d2e", "e2c")


@dataclass
class MetricsLog:
    """Accuracy rows plus D2D/D2E/E2C counters, appended as the run progresses."""

    run_meta: dict = field(default_factory=dict)
    rows: list[tuple[int, int, float, float]] = field(default_factory=list)  # (round, node, acc, loss)
    comm: dict[int, dict[str, int]] = field(default_factory=dict)            # round -> link -> count

    def record_message(self, link: str, round_index: int) -> None:
        """Count one model transmission over the given link class."""
        if link not in LINK_TYPES:
            raise ValueError(f"unknown link type {link!r}, expected one of {LINK_TYPES}")
        counters = self.comm.setdefault(round_index, {name: 0 for name in LINK_TYPES})
        counters[link] += 1

    def record_eval(self, round_index: int, node: int, accuracy: float, loss: float) -> None:
        self.rows.append((round_index, node, accuracy, loss))

    def rounds(self) -> list[int]:
        present = {r for r, *_ in self.rows} | set(self.comm)
        return sorted(present)

    def comm_for(self, round_index: int) -> dict[str, int]:
        return dict(self.comm.get(round_index, {name: 0 for name in LINK_TYPES}))

    def total_messages(self) -> int:
        return sum(sum(counters.values()) for counters in self.comm.values())


@dataclass(frozen=True)
class SummaryRow:
    round_index: int
    mean_accuracy: float
    std_accuracy: float
    cum_d2d: int
    cum_d2e: int
    cum_e2c: int


def summarize(log: MetricsLog) -> list[SummaryRow]:
    """Per-round node-mean/std accuracy plus cumulative link counters."""
    if not log.rows and not log.comm:
        raise ValueError("cannot summarize an empty log")
    by_round: dict[int, list[float]] = {}
    for round_index, _node, accuracy, _loss in log.rows:
        by_round.setdefault(round_index, []).append(accuracy)

    out: list[SummaryRow] = []
    running = {name: 0 for name in LINK_TYPES}
    for round_index in log.rounds():
        for name, count in log.comm_for(round_index).items():
            running[name] += count
        accs = by_round.get(round_index, [])
        mean = float(np.mean(accs)) if accs else float("nan")
        std = float(np.std(accs)) if accs else float("nan")
        out.append(SummaryRow(round_index, mean, std,
                              running["d2d"], running["d2e"], running["e2c"]))
    return out


def export(log: MetricsLog, directory: str | Path) -> None:
    """Write metrics.csv, comm.csv and run.json into a directory.

    Column order is fixed, floats keep full round-trip precision, files are
    UTF-8 and newline-terminated; re-exporting the same log is byte-identical.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    try:
        lines = ["round,node,accuracy,loss"]
        for round_index, node, accuracy, loss in log.rows:
            lines.append(f"{round_index},{node},{accuracy!r},{loss!r}")
        (directory / "metrics.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

        lines = ["round,d2d,d2e,e2c"]
        for round_index in sorted(log.comm):
            counters = log.comm[round_index]
            lines.append(f"{round_index},{counters['d2d']},{counters['d2e']},{counters['e2c']}")
        (directory / "comm.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

        (directory / "run.json").write_text(
            json.dumps(log.run_meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    except OSError as err:
        raise OSError(f"failed to export metrics into {directory}: {err}") from err
