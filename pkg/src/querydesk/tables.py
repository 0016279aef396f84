"""Tabular results returned by the governed endpoints, and table equivalence.

Every endpoint standardizes its output into a TabularResult. Comparison is
order-insensitive over rows and alias-insensitive over metric columns
(columns are matched by the canonical select source recorded in
provenance), with a relative tolerance for numeric cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

MASK_SENTINEL = "•••"

NUMERIC_VALUE_TYPES = frozenset({"number", "duration_seconds", "percentage"})


@dataclass(frozen=True)
class TableDiff:
    """First difference found between two tables; `column` is None for shape diffs."""

    column: str | None
    detail: str
    expected: object = None
    actual: object = None


@dataclass
class TabularResult:
    """Schema + rows from one endpoint execution.

    provenance carries `endpoint` and `request_id`, plus optional context
    used downstream: `select_sources` (output column name -> canonical
    select source, for alias-insensitive comparison), `scope` and `window`
    (display strings for chart titles and summaries).
    """

    schema: list[dict]
    rows: list[list]
    provenance: dict
    masked_columns: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        self.masked_columns = frozenset(self.masked_columns)
        width = len(self.schema)
        for row in self.rows:
            if len(row) != width:
                raise ValueError(f"row arity {len(row)} != schema arity {width}")

    @property
    def column_names(self) -> list[str]:
        return [c["name"] for c in self.schema]

    def column(self, name: str) -> list:
        idx = self.column_names.index(name)
        return [row[idx] for row in self.rows]

    def to_json(self) -> dict:
        return {
            "schema": list(self.schema),
            "rows": [list(r) for r in self.rows],
            "provenance": dict(self.provenance),
            "masked_columns": sorted(self.masked_columns),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TabularResult":
        return cls(
            schema=list(obj["schema"]),
            rows=[list(r) for r in obj["rows"]],
            provenance=dict(obj.get("provenance", {})),
            masked_columns=frozenset(obj.get("masked_columns", ())),
        )


def _numbers_close(a: float, b: float, rel_tol: float) -> bool:
    return math.isclose(a, b, rel_tol=rel_tol, abs_tol=1e-9)


def _column_key(table: TabularResult, name: str) -> str:
    sources = table.provenance.get("select_sources") or {}
    return sources.get(name, name)


def _sort_key(row: list) -> tuple:
    key = []
    for cell in row:
        if cell is None:
            key.append((2, ""))
        elif isinstance(cell, bool):
            key.append((1, float(cell)))
        elif isinstance(cell, (int, float)):
            key.append((1, round(float(cell), 9)))
        else:
            key.append((0, str(cell)))
    return tuple(key)


def compare_tables(a: TabularResult, b: TabularResult, rel_tol: float = 1e-6) -> TableDiff | None:
    """None when the tables are equivalent, else the first difference.

    Equivalence ignores row order and output aliases (metric columns match
    by canonical select source); numeric cells compare within `rel_tol`
    relative tolerance.
    """
    a_keys = [_column_key(a, n) for n in a.column_names]
    b_keys = [_column_key(b, n) for n in b.column_names]
    if sorted(a_keys) != sorted(b_keys):
        return TableDiff(
            column=None,
            detail=f"column sets differ: {sorted(a_keys)} vs {sorted(b_keys)}",
        )
    # Reorder b's columns into a's order, consuming duplicates left to right.
    remaining = list(enumerate(b_keys))
    order: list[int] = []
    for key in a_keys:
        for pos, (b_idx, b_key) in enumerate(remaining):
            if b_key == key:
                order.append(b_idx)
                del remaining[pos]
                break
    b_rows = [[row[i] for i in order] for row in b.rows]

    if len(a.rows) != len(b_rows):
        return TableDiff(column=None, detail=f"row counts differ: {len(a.rows)} vs {len(b_rows)}")

    a_sorted = sorted(a.rows, key=_sort_key)
    b_sorted = sorted(b_rows, key=_sort_key)
    for a_row, b_row in zip(a_sorted, b_sorted):
        for col_idx, (x, y) in enumerate(zip(a_row, b_row)):
            name = a.column_names[col_idx]
            if x is None and y is None:
                continue
            if isinstance(x, bool) or isinstance(y, bool):
                if bool(x) != bool(y):
                    return TableDiff(name, f"{name}: {x!r} != {y!r}", x, y)
                continue
            if isinstance(x, (int, float)) and isinstance(y, (int, float)):
                if not _numbers_close(float(x), float(y), rel_tol):
                    return TableDiff(name, f"{name}: {x!r} != {y!r}", x, y)
                continue
            if x != y:
                return TableDiff(name, f"{name}: {x!r} != {y!r}", x, y)
    return None
