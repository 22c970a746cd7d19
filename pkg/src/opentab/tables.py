"""Table corpus ingestion, normalization, and the canonical table model.

Every cell is stored as text and every column is declared textual; numeric
semantics are recovered inside generated SQL via casts.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Union


class FormatError(ValueError):
    """The corpus file cannot be parsed under the named format."""


REJECT_CELL_COUNT_MISMATCH = "CellCountMismatch"
REJECT_EMPTY_HEADER = "EmptyHeader"
REJECT_NO_COLUMNS = "NoColumns"
REJECT_MULTI_HEADER = "MultiHeader"

_NON_ALNUM = re.compile(r"[^a-z0-9]+")


def sanitize_identifier(raw: str) -> str:
    """Normalize arbitrary header text into a safe SQL identifier.

    Lowercases, collapses runs of non-alphanumerics into single underscores,
    strips trailing underscores, prefixes an underscore when the result would
    start with a digit, and falls back to "col" for empty results. Collision
    suffixes ("_2", "_3", ...) are the caller's job.
    """
    name = _NON_ALNUM.sub("_", raw.lower())
    name = name.rstrip("_")
    if not name:
        return "col"
    if name[0].isdigit():
        name = "_" + name
    return name


def dedupe_identifiers(names: Iterable[str]) -> list[str]:
    """Make sanitized names pairwise distinct, keeping first occurrences."""
    out: list[str] = []
    seen: set[str] = set()
    for base in names:
        name = base
        if name in seen:
            i = 2
            while f"{base}_{i}" in seen:
                i += 1
            name = f"{base}_{i}"
        seen.add(name)
        out.append(name)
    return out


@dataclass(frozen=True)
class ColumnSpec:
    raw_name: str
    sql_name: str
    declared_type: str = "text"


@dataclass
class Table:
    id: str
    title: str
    columns: list[ColumnSpec]
    rows: list[list[str]]

    @property
    def sql_names(self) -> list[str]:
        return [c.sql_name for c in self.columns]

    @property
    def raw_header(self) -> list[str]:
        return [c.raw_name for c in self.columns]


@dataclass(frozen=True)
class RawTable:
    """An unvalidated table record as produced by a corpus reader/adapter."""

    id: str
    title: str
    header: list[str]
    rows: list[list[str]]


@dataclass(frozen=True)
class Rejection:
    table_id: str
    reason: str


def normalize_table(raw: RawTable) -> Union[Table, Rejection]:
    """Validate and normalize one raw table, or name the defect.

    A table is accepted iff it has at least one column, no empty header
    cell, and every row matches the header arity. Header names are
    sanitized and deduplicated in order.
    """
    if not raw.header:
        return Rejection(raw.id, REJECT_NO_COLUMNS)
    if any(not h.strip() for h in raw.header):
        return Rejection(raw.id, REJECT_EMPTY_HEADER)
    arity = len(raw.header)
    for row in raw.rows:
        if len(row) != arity:
            return Rejection(raw.id, REJECT_CELL_COUNT_MISMATCH)
    sql_names = dedupe_identifiers(sanitize_identifier(h) for h in raw.header)
    columns = [ColumnSpec(h, s) for h, s in zip(raw.header, sql_names)]
    rows = [[cell_text(c) for c in row] for row in raw.rows]
    return Table(id=raw.id, title=raw.title, columns=columns, rows=rows)


def cell_text(value: object) -> str:
    """Coerce a raw cell value to its canonical text form."""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    return str(value)


class TableCorpus:
    """Id-keyed collection of normalized tables with deterministic order."""

    def __init__(self, tables: Iterable[Table], source_manifest: dict | None = None):
        ordered = sorted(tables, key=lambda t: t.id)
        self._tables: dict[str, Table] = {}
        for t in ordered:
            if t.id in self._tables:
                raise FormatError(f"duplicate table id: {t.id!r}")
            self._tables[t.id] = t
        self.source_manifest = dict(source_manifest or {})

    def __len__(self) -> int:
        return len(self._tables)

    def __iter__(self) -> Iterator[Table]:
        return iter(self._tables.values())

    def __contains__(self, table_id: str) -> bool:
        return table_id in self._tables

    @property
    def table_ids(self) -> list[str]:
        return list(self._tables)

    def get(self, table_id: str) -> Table:
        try:
            return self._tables[table_id]
        except KeyError:
            raise KeyError(f"unknown table id: {table_id!r}") from None

    def save_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for table in self:
                record = {
                    "id": table.id,
                    "title": table.title,
                    "header": table.raw_header,
                    "rows": table.rows,
                }
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_tables_jsonl(path: str | Path) -> Iterator[RawTable]:
    """Read the default corpus format: one JSON object per line."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if not isinstance(record, dict) or "header" not in record or "rows" not in record:
                raise FormatError(f"{path}:{lineno}: expected an object with header/rows")
            yield RawTable(
                id=str(record.get("id") or f"{path.stem}-{lineno}"),
                title=cell_text(record.get("title", "")),
                header=[cell_text(h) for h in record["header"]],
                rows=[[cell_text(c) for c in row] for row in record["rows"]],
            )


CORPUS_FORMATS = ("tables-jsonl", "open-wikitable", "feverous")


def ingest_corpus(
    source: str | Path, fmt: str = "tables-jsonl"
) -> tuple[TableCorpus, list[Rejection]]:
    """Normalize every well-formed table in `source`; report the rest.

    Raises OSError when the source is unreadable and FormatError when it
    does not parse under `fmt`; both abort the ingestion.
    """
    if fmt == "tables-jsonl":
        items: Iterable[Union[RawTable, Rejection]] = read_tables_jsonl(source)
    elif fmt == "open-wikitable":
        from . import adapters

        items = adapters.read_open_wikitable_tables(source)
    elif fmt == "feverous":
        from . import adapters

        items = adapters.read_feverous_tables(source)
    else:
        raise FormatError(f"unknown corpus format: {fmt!r}")

    tables: list[Table] = []
    rejections: list[Rejection] = []
    for item in items:
        if isinstance(item, Rejection):
            rejections.append(item)
            continue
        normalized = normalize_table(item)
        if isinstance(normalized, Rejection):
            rejections.append(normalized)
        else:
            tables.append(normalized)
    manifest = {
        "source": str(source),
        "format": fmt,
        "table_count": len(tables),
        "rejection_count": len(rejections),
    }
    return TableCorpus(tables, manifest), rejections


def save_rejections(path: str | Path, rejections: Iterable[Rejection]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rejections:
            fh.write(json.dumps({"id": r.table_id, "reason": r.reason}, ensure_ascii=False) + "\n")
