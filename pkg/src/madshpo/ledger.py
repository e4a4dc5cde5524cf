"""Append-only run ledger: CSV persistence and convergence-series export.

The ledger records every charged event of a campaign (full evaluations,
surrogate estimates, ranking passes).  Files carry the campaign settings
as ``# key = value`` header lines so a run can be resumed or audited from
the file alone.  Identical campaigns write byte-identical files.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

KIND_FULL = "full-eval"
KIND_SURROGATE = "surrogate-eval"
KIND_RANKING = "ranking-pass"

COLUMNS = (
    "record_index",
    "kind",
    "config",
    "score",
    "epochs_used",
    "stop_reason",
    "charged_cost",
    "cumulative_cost",
    "incumbent",
    "iteration",
    "mesh_index",
)


@dataclass(frozen=True)
class LedgerRecord:
    record_index: int
    kind: str
    config: str
    score: float
    epochs_used: int
    stop_reason: str
    charged_cost: float
    cumulative_cost: float
    incumbent: bool
    iteration: int
    mesh_index: int

    def row(self) -> list[str]:
        return [
            str(self.record_index),
            self.kind,
            self.config,
            repr(self.score),
            str(self.epochs_used),
            self.stop_reason,
            repr(self.charged_cost),
            repr(self.cumulative_cost),
            "1" if self.incumbent else "0",
            str(self.iteration),
            str(self.mesh_index),
        ]

    @classmethod
    def from_row(cls, row: list[str]) -> "LedgerRecord":
        return cls(
            record_index=int(row[0]),
            kind=row[1],
            config=row[2],
            score=float(row[3]),
            epochs_used=int(row[4]),
            stop_reason=row[5],
            charged_cost=float(row[6]),
            cumulative_cost=float(row[7]),
            incumbent=row[8] == "1",
            iteration=int(row[9]),
            mesh_index=int(row[10]),
        )


def dumps_ledger(records, header: dict[str, str]) -> str:
    buf = io.StringIO()
    for key in header:
        buf.write(f"# {key} = {header[key]}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for record in records:
        writer.writerow(record.row())
    return buf.getvalue()


def write_ledger(path: Path, records, header: dict[str, str]) -> None:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(dumps_ledger(records, header))
    tmp.replace(path)


def read_ledger(path: Path) -> tuple[dict[str, str], list[LedgerRecord]]:
    header: dict[str, str] = {}
    body_lines: list[str] = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            header[key.strip()] = value.strip()
        elif line:
            body_lines.append(line)
    if not body_lines or tuple(next(csv.reader([body_lines[0]]))) != COLUMNS:
        raise ValueError(f"{path}: not a ledger file")
    records = [LedgerRecord.from_row(row) for row in csv.reader(body_lines[1:])]
    for prev, rec in zip(records, records[1:]):
        if rec.cumulative_cost < prev.cumulative_cost:
            raise ValueError(f"{path}: cumulative cost decreases at record {rec.record_index}")
    return header, records


SERIES_COLUMNS = ("bbe", "epochs", "cost_units", "best_accuracy")


def export_convergence(records, *, surrogate_data_fraction: float = 1.0) -> list[tuple[float, int, float, float]]:
    """Best-so-far accuracy against three aligned cost axes.

    One row per full evaluation: cumulative charged budget, cumulative
    epochs over all trainings, and cumulative abstract cost (epochs scaled
    by the data fraction actually used).
    """
    if not records:
        raise ValueError("ledger is empty")
    rows = []
    epochs = 0
    cost_units = 0.0
    best = float("-inf")
    for rec in records:
        epochs += rec.epochs_used
        if rec.kind == KIND_FULL:
            cost_units += rec.epochs_used
            best = max(best, rec.score)
            rows.append((rec.cumulative_cost, epochs, cost_units, best))
        elif rec.kind == KIND_SURROGATE:
            cost_units += rec.epochs_used * surrogate_data_fraction
    if not rows:
        raise ValueError("ledger has no full evaluations")
    return rows


def write_series(path: Path, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SERIES_COLUMNS)
    for bbe, epochs, cost_units, best in rows:
        writer.writerow([repr(float(bbe)), str(epochs), repr(float(cost_units)), repr(float(best))])
    Path(path).write_text(buf.getvalue())
