"""Result rows in the shared evaluation report schema.

Column layout, float formatting (repr), empty-string cells for unused
dimensions, and full-row sorting all match the upstream harness, so
these rows concatenate cleanly with its reports.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

REPORT_COLUMNS = (
    "model", "target", "granularity", "protocol", "text_config",
    "metric", "k", "held_out", "mean", "std", "n_seeds",
)


@dataclass(frozen=True)
class ResultRow:
    model: str
    target: str
    granularity: str
    protocol: str
    text_config: str
    metric: str
    mean: float
    std: float
    n_seeds: int
    k: Optional[int] = None
    held_out: str = ""

    def as_csv_row(self) -> list:
        return [
            self.model, self.target, self.granularity, self.protocol,
            self.text_config, self.metric,
            "" if self.k is None else str(self.k),
            self.held_out, repr(float(self.mean)), repr(float(self.std)),
            str(self.n_seeds),
        ]


def aggregate_seeds(values: Sequence[float]) -> tuple:
    """(mean, population std) across per-seed scores."""
    arr = np.asarray(list(values), dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def write_report(rows: Sequence[ResultRow], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(rows, key=lambda r: r.as_csv_row())
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in ordered:
            writer.writerow(row.as_csv_row())
