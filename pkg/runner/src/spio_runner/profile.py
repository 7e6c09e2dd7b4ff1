"""Profile delimited files into data-description documents.

Field-compatible with the engine's dataset profiler: same dtype rules
(numeric when every non-null cell is a number, boolean for true/false/0/1,
otherwise categorical or text by cardinality), nulls are empty cells,
sample records are head rows.
"""

from __future__ import annotations

import csv
from pathlib import Path

DEFAULT_SAMPLE_SIZE = 5

_NUMBER_REJECTS = frozenset(
    {"nan", "inf", "-inf", "+inf", "infinity", "-infinity", "+infinity"}
)


class _ColumnStats:
    __slots__ = ("nulls", "all_numeric", "all_boolish", "distinct", "seen_value")

    def __init__(self) -> None:
        self.nulls = 0
        self.all_numeric = True
        self.all_boolish = True
        self.distinct: set[str] = set()
        self.seen_value = False

    def feed(self, cell: str) -> None:
        if cell == "":
            self.nulls += 1
            return
        self.seen_value = True
        self.distinct.add(cell)
        if self.all_numeric and not _is_number(cell):
            self.all_numeric = False
        if self.all_boolish and cell.strip().lower() not in ("true", "false", "0", "1"):
            self.all_boolish = False

    def dtype(self, row_count: int) -> str:
        if self.seen_value:
            if self.all_numeric:
                return "numeric"
            if self.all_boolish:
                return "boolean"
        if len(self.distinct) <= max(20.0, 0.05 * row_count):
            return "categorical"
        return "text"


def _is_number(cell: str) -> bool:
    text = cell.strip()
    if text.lower() in _NUMBER_REJECTS:
        return False
    try:
        value = float(text)
    except ValueError:
        return False
    # inf/nan spellings are rejected above; anything else float() accepts is finite
    return value == value and value not in (float("inf"), float("-inf"))


def error_document(reason: str, path: str) -> dict:
    return {"error": reason, "source_path": path}


def summarize_csv(path: str | Path, sample_size: int = DEFAULT_SAMPLE_SIZE) -> dict:
    """Return a data-description document, or an error document with a reason."""
    path = Path(path)
    if not path.is_file():
        return error_document("file_not_found", str(path))
    stats: list[_ColumnStats] = []
    sample: list[list[str]] = []
    row_count = 0
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            try:
                header = next(reader)
            except StopIteration:
                return error_document("malformed_csv", str(path))
            stats = [_ColumnStats() for _ in header]
            for row in reader:
                if len(row) != len(header):
                    return error_document("malformed_csv", str(path))
                row_count += 1
                if len(sample) < sample_size:
                    sample.append(row)
                for stat, cell in zip(stats, row):
                    stat.feed(cell)
    except OSError:
        return error_document("unreadable", str(path))
    if row_count == 0:
        return error_document("empty_dataset", str(path))
    return {
        "row_count": row_count,
        "column_specs": [[name, stat.dtype(row_count)] for name, stat in zip(header, stats)],
        "null_ratio": {name: stat.nulls / row_count for name, stat in zip(header, stats)},
        "sample_records": [
            {name: (cell if cell != "" else None) for name, cell in zip(header, row)}
            for row in sample
        ],
        "source_path": str(path),
    }
