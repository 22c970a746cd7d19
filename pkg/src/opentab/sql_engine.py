"""In-memory SQLite materialization and sandboxed, classified execution.

Generated SQL runs read-only (PRAGMA query_only plus a statement gate),
under a wall-clock timeout and a result-row cap, and every call maps to
exactly one of four outcome statuses.
"""

from __future__ import annotations

import re
import sqlite3
import time
from dataclasses import dataclass, field
from enum import Enum

from .tables import Table, sanitize_identifier


class EngineError(RuntimeError):
    """Materialization failed; the table cannot be queried this run."""


class ExecutionStatus(str, Enum):
    OK = "ok"
    SYNTAX_ERROR = "syntax_error"
    EMPTY_RESULT = "empty_result"
    LIMIT_EXCEEDED = "limit_exceeded"


@dataclass(frozen=True)
class ExecutionLimits:
    timeout_s: float = 10.0
    max_result_rows: int = 200


@dataclass
class ResultGrid:
    columns: list[str]
    rows: list[list[str]]


@dataclass
class ExecutionOutcome:
    status: ExecutionStatus
    result: ResultGrid | None = None
    error_message: str | None = None
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status is ExecutionStatus.OK


_LEADING_NOISE = re.compile(r"^(?:\s+|--[^\n]*\n?|/\*.*?\*/)*", re.DOTALL)
_FIRST_WORD = re.compile(r"[A-Za-z]+")


def _leading_keyword(sql: str) -> str:
    rest = sql[_LEADING_NOISE.match(sql).end() :]
    m = _FIRST_WORD.match(rest)
    return m.group(0).lower() if m else ""


def _value_text(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, bytes):
        return value.decode("utf-8", errors="replace")
    return str(value)


class TableSession:
    """One private in-memory database holding a query's candidate tables."""

    def __init__(self):
        self._conn = sqlite3.connect(":memory:")
        self._names: set[str] = set()
        self._handles: list[TableHandle] = []

    def __enter__(self) -> "TableSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        self._conn.close()

    @property
    def handles(self) -> list["TableHandle"]:
        return list(self._handles)

    def add_table(self, table: Table) -> "TableHandle":
        """Materialize one normalized table with a session-unique name."""
        base = sanitize_identifier(table.title or table.id)
        name = base
        if name in self._names:
            i = 2
            while f"{base}_{i}" in self._names:
                i += 1
            name = f"{base}_{i}"
        cols = ", ".join(f'"{c.sql_name}" TEXT' for c in table.columns)
        try:
            self._conn.execute(f'CREATE TABLE "{name}" ("row_id" INTEGER, {cols})')
            placeholders = ", ".join(["?"] * (len(table.columns) + 1))
            self._conn.executemany(
                f'INSERT INTO "{name}" VALUES ({placeholders})',
                [[i, *row] for i, row in enumerate(table.rows)],
            )
            self._conn.commit()
        except sqlite3.Error as exc:
            raise EngineError(f"failed to materialize table {table.id!r}: {exc}") from exc
        self._names.add(name)
        handle = TableHandle(table_id=table.id, sql_table_name=name, session=self)
        self._handles.append(handle)
        return handle

    def execute(self, sql: str, limits: ExecutionLimits = ExecutionLimits()) -> ExecutionOutcome:
        """Run one read-only statement and classify the outcome."""
        start = time.monotonic()
        keyword = _leading_keyword(sql)
        if keyword not in ("select", "with"):
            return ExecutionOutcome(
                ExecutionStatus.SYNTAX_ERROR,
                error_message=f"refused: only SELECT/WITH statements are allowed, got {keyword or 'nothing'!r}",
                elapsed=time.monotonic() - start,
            )

        deadline = start + limits.timeout_s
        timed_out = False

        def _tick():
            nonlocal timed_out
            if time.monotonic() > deadline:
                timed_out = True
                return 1
            return 0

        self._conn.execute("PRAGMA query_only = ON")
        self._conn.set_progress_handler(_tick, 20_000)
        try:
            cur = self._conn.execute(sql)
            rows = cur.fetchmany(limits.max_result_rows + 1)
            columns = [d[0] for d in cur.description] if cur.description else []
        except Exception as exc:  # classification totality: nothing escapes
            elapsed = time.monotonic() - start
            if timed_out:
                return ExecutionOutcome(
                    ExecutionStatus.LIMIT_EXCEEDED,
                    error_message=f"timeout after {limits.timeout_s}s",
                    elapsed=elapsed,
                )
            return ExecutionOutcome(
                ExecutionStatus.SYNTAX_ERROR, error_message=str(exc), elapsed=elapsed
            )
        finally:
            self._conn.set_progress_handler(None, 0)
            self._conn.execute("PRAGMA query_only = OFF")

        elapsed = time.monotonic() - start
        if timed_out:
            return ExecutionOutcome(
                ExecutionStatus.LIMIT_EXCEEDED,
                error_message=f"timeout after {limits.timeout_s}s",
                elapsed=elapsed,
            )
        if len(rows) > limits.max_result_rows:
            return ExecutionOutcome(
                ExecutionStatus.LIMIT_EXCEEDED,
                error_message=f"result exceeded {limits.max_result_rows} rows",
                elapsed=elapsed,
            )
        if not rows:
            return ExecutionOutcome(ExecutionStatus.EMPTY_RESULT, elapsed=elapsed)
        grid = ResultGrid(columns, [[_value_text(v) for v in r] for r in rows])
        return ExecutionOutcome(ExecutionStatus.OK, result=grid, elapsed=elapsed)


@dataclass
class TableHandle:
    table_id: str
    sql_table_name: str
    session: TableSession

    def execute(self, sql: str, limits: ExecutionLimits = ExecutionLimits()) -> ExecutionOutcome:
        return self.session.execute(sql, limits)


def materialize(table: Table) -> TableHandle:
    """Materialize one table into its own fresh session."""
    return TableSession().add_table(table)


def execute(
    handle: TableHandle, sql: str, limits: ExecutionLimits = ExecutionLimits()
) -> ExecutionOutcome:
    return handle.execute(sql, limits)


_FLAT = re.compile(r"[\t\n\r]+")


def render_result(outcome: ExecutionOutcome, max_rows: int = 200) -> str:
    """Render an Ok outcome as the tab-separated block embedded in prompts."""
    if not outcome.ok or outcome.result is None:
        raise ValueError("render_result requires an Ok outcome")
    grid = outcome.result
    lines = ["\t".join(_FLAT.sub(" ", c) for c in grid.columns)]
    shown = grid.rows[:max_rows]
    for row in shown:
        lines.append("\t".join(_FLAT.sub(" ", c) for c in row))
    hidden = len(grid.rows) - len(shown)
    if hidden > 0:
        lines.append(f"... ({hidden} more rows)")
    return "\n".join(lines)
