"""
Embedded SQL engine helpers built on SQLite.

A schema is described by a JSON file ``{"tables": [{"name", "heat"?,
"columns": [{"name", "type", "comment"?}]}]}`` or introspected from an
attached SQLite database (heat defaults to 0). Every connection opened here
registers the date helper functions (YEAR/MONTH/QUARTER) that warehouse
dialects provide natively, so date-filtered statements run unchanged.
"""

from __future__ import annotations

import json
import sqlite3
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "ColumnDef",
    "TableDef",
    "Schema",
    "ResultTable",
    "connect",
    "run_select",
    "run_select_capped",
    "schema_scratch_connection",
]


@dataclass(frozen=True)
class ColumnDef:
    name: str
    type: str = "TEXT"
    comment: str = ""


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple[ColumnDef, ...]
    heat: float = 0.0
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class Schema:
    tables: tuple[TableDef, ...] = ()

    def table_names(self) -> list[str]:
        return [t.name for t in self.tables]

    def table(self, name: str) -> TableDef | None:
        for t in self.tables:
            if t.name == name:
                return t
        return None

    @staticmethod
    def load(path: str | Path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return Schema.from_dict(raw)

    @staticmethod
    def from_dict(raw: dict) -> "Schema":
        tables = []
        for t in raw.get("tables", []):
            columns = tuple(
                ColumnDef(name=c["name"], type=c.get("type", "TEXT"), comment=c.get("comment", ""))
                for c in t.get("columns", [])
            )
            tables.append(
                TableDef(
                    name=t["name"],
                    columns=columns,
                    heat=float(t.get("heat", 0.0)),
                    tags=tuple(t.get("tags", [])),
                )
            )
        return Schema(tables=tuple(tables))

    @staticmethod
    def introspect(db_path: str | Path) -> "Schema":
        """Derive a schema from an existing SQLite database's catalogs."""
        with connect(db_path) as conn:
            names = [
                row[0]
                for row in conn.execute(
                    "SELECT name FROM sqlite_master WHERE type='table' "
                    "AND name NOT LIKE 'sqlite_%' ORDER BY name"
                )
            ]
            tables = []
            for name in names:
                cols = tuple(
                    ColumnDef(name=row[1], type=row[2] or "TEXT")
                    for row in conn.execute(f'PRAGMA table_info("{name}")')
                )
                tables.append(TableDef(name=name, columns=cols, heat=0.0))
        return Schema(tables=tuple(tables))

    def render(self) -> str:
        """DDL-ish text listing used in generation prompts."""
        lines = []
        for t in self.tables:
            cols = ", ".join(
                f"{c.name} {c.type}" + (f" /* {c.comment} */" if c.comment else "")
                for c in t.columns
            )
            lines.append(f"TABLE {t.name} ({cols})")
        return "\n".join(lines)


@dataclass
class ResultTable:
    """Columns plus row tuples, the unit passed between execution and tools."""

    columns: list[str] = field(default_factory=list)
    rows: list[tuple] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def column_values(self, name: str) -> list:
        idx = self.columns.index(name)
        return [row[idx] for row in self.rows]

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}

    @staticmethod
    def from_dict(raw: dict) -> "ResultTable":
        return ResultTable(
            columns=list(raw.get("columns", [])),
            rows=[tuple(r) for r in raw.get("rows", [])],
        )


def _year(value) -> int | None:
    if value is None:
        return None
    return int(str(value)[0:4])


def _month(value) -> int | None:
    if value is None:
        return None
    return int(str(value)[5:7])


def _quarter(value) -> int | None:
    month = _month(value)
    return None if month is None else (month - 1) // 3 + 1


def connect(path: str | Path = ":memory:") -> sqlite3.Connection:
    """Open a connection with the date helper functions registered."""
    conn = sqlite3.connect(str(path))
    conn.create_function("YEAR", 1, _year, deterministic=True)
    conn.create_function("MONTH", 1, _month, deterministic=True)
    conn.create_function("QUARTER", 1, _quarter, deterministic=True)
    return conn


def run_select(conn: sqlite3.Connection, sql: str) -> ResultTable:
    """Execute one SELECT-family statement and materialize the result."""
    cursor = conn.execute(sql)
    columns = [d[0] for d in cursor.description] if cursor.description else []
    return ResultTable(columns=columns, rows=[tuple(r) for r in cursor.fetchall()])


def run_select_capped(conn: sqlite3.Connection, sql: str, cap: int) -> tuple[ResultTable, bool]:
    """As :func:`run_select` but keep at most ``cap`` rows; flags truncation."""
    cursor = conn.execute(sql)
    columns = [d[0] for d in cursor.description] if cursor.description else []
    rows = cursor.fetchmany(cap + 1)
    truncated = len(rows) > cap
    return ResultTable(columns=columns, rows=[tuple(r) for r in rows[:cap]]), truncated


def schema_scratch_connection(schema: Schema) -> sqlite3.Connection:
    """In-memory database carrying the schema's empty tables (for validation)."""
    conn = connect(":memory:")
    for table in schema.tables:
        cols = ", ".join(f'"{c.name}" {c.type or "TEXT"}' for c in table.columns)
        conn.execute(f'CREATE TABLE "{table.name}" ({cols})')
    return conn
