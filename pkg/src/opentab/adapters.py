"""Dataset-layout converters that emit the canonical tables-jsonl shape.

These adapters map the published dump layouts onto RawTable records; field
names are matched tolerantly because the dumps have shifted across
releases. Anything the SQL interface cannot represent (multi-header
grids) is surfaced as a rejection rather than flattened.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterator, Union

from .reader import TASK_FACT, TASK_QA
from .tables import (
    REJECT_MULTI_HEADER,
    FormatError,
    RawTable,
    Rejection,
    cell_text,
)

_OWT_ID_KEYS = ("id", "table_id", "tbl_id")
_OWT_HEADER_KEYS = ("header", "headers", "columns")
_OWT_ROW_KEYS = ("rows", "data", "cells")
_OWT_TITLE_PARTS = ("page_title", "section_title", "caption")


def _load_records(path: str | Path) -> list[dict]:
    """Accept either a JSON array file or a JSON-lines file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        records = json.loads(text)
        if not isinstance(records, list):
            raise FormatError(f"{path}: expected a JSON array")
        return records
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
    return records


def _first_key(record: dict, keys: tuple[str, ...], where: str):
    for key in keys:
        if key in record:
            return record[key]
    raise FormatError(f"{where}: none of {keys} present")


def read_open_wikitable_tables(path: str | Path) -> Iterator[RawTable]:
    """Tables dump: objects with an id, page/section/caption context, header, rows."""
    for i, record in enumerate(_load_records(path), start=1):
        where = f"{path}:{i}"
        table_id = cell_text(_first_key(record, _OWT_ID_KEYS, where))
        if "title" in record:
            title = cell_text(record["title"])
        else:
            parts = [cell_text(record.get(k, "")) for k in _OWT_TITLE_PARTS]
            title = " ".join(p for p in parts if p)
        header = [cell_text(h) for h in _first_key(record, _OWT_HEADER_KEYS, where)]
        rows = [
            [cell_text(c) for c in row] for row in _first_key(record, _OWT_ROW_KEYS, where)
        ]
        yield RawTable(id=table_id, title=title, header=header, rows=rows)


def read_open_wikitable_queries(path: str | Path) -> Iterator[dict]:
    """Query dump -> the JSON-lines query schema used by the eval harness."""
    for i, record in enumerate(_load_records(path), start=1):
        where = f"{path}:{i}"
        qid = cell_text(_first_key(record, ("id", "qid", "question_id"), where))
        question = cell_text(_first_key(record, ("question", "query"), where))
        gold = record.get("gold_table_ids") or record.get("table_ids")
        if gold is None:
            gold = [_first_key(record, ("table_id", "gold_table_id"), where)]
        answers = record.get("gold_answers")
        if answers is None:
            answers = record.get("answer", record.get("answers", []))
        if isinstance(answers, (str, int, float)):
            answers = [answers]
        yield {
            "id": qid,
            "question": question,
            "task": TASK_QA,
            "gold_table_ids": [cell_text(t) for t in gold],
            "gold_answers": [cell_text(a) for a in answers],
        }


def read_feverous_tables(path: str | Path) -> Iterator[Union[RawTable, Rejection]]:
    """FEVEROUS-style tables: either pre-extracted header/rows records or the
    cell-grid shape ({"table": [[{"value", "is_header"}, ...], ...]}).

    Grids whose header cells extend beyond the first row are multi-header
    web tables and are rejected, mirroring the corpus filtering.
    """
    for i, record in enumerate(_load_records(path), start=1):
        where = f"{path}:{i}"
        table_id = cell_text(_first_key(record, ("id", "table_id"), where))
        title = cell_text(record.get("title", record.get("page", "")))
        if "header" in record and "rows" in record:
            yield RawTable(
                id=table_id,
                title=title,
                header=[cell_text(h) for h in record["header"]],
                rows=[[cell_text(c) for c in row] for row in record["rows"]],
            )
            continue
        grid = record.get("table")
        if not isinstance(grid, list) or not grid:
            raise FormatError(f"{where}: expected header/rows or a cell grid under 'table'")
        header_rows = [
            row for row in grid if any(isinstance(c, dict) and c.get("is_header") for c in row)
        ]
        if len(header_rows) > 1 or (header_rows and header_rows[0] is not grid[0]):
            yield Rejection(table_id, REJECT_MULTI_HEADER)
            continue
        header = [cell_text(c.get("value") if isinstance(c, dict) else c) for c in grid[0]]
        rows = [
            [cell_text(c.get("value") if isinstance(c, dict) else c) for c in row]
            for row in grid[1:]
        ]
        yield RawTable(id=table_id, title=title, header=header, rows=rows)


_FACT_LABELS = {"supports": "supports", "refutes": "refutes"}


def read_feverous_queries(path: str | Path) -> Iterator[dict]:
    """Claim dump -> query schema; claims outside supports/refutes are skipped."""
    for i, record in enumerate(_load_records(path), start=1):
        where = f"{path}:{i}"
        label = cell_text(record.get("label", "")).lower()
        if label not in _FACT_LABELS:
            continue
        gold = record.get("gold_table_ids") or record.get("table_ids") or record.get("evidence")
        if gold is None:
            raise FormatError(f"{where}: no gold table ids")
        yield {
            "id": cell_text(_first_key(record, ("id", "claim_id"), where)),
            "question": cell_text(_first_key(record, ("claim", "question"), where)),
            "task": TASK_FACT,
            "gold_table_ids": [cell_text(t) for t in gold],
            "gold_label": _FACT_LABELS[label],
        }


def convert_queries(source: str | Path, fmt: str, out_path: str | Path) -> int:
    """Write a dataset's queries in the harness's JSON-lines schema."""
    if fmt == "open-wikitable":
        items = read_open_wikitable_queries(source)
    elif fmt == "feverous":
        items = read_feverous_queries(source)
    else:
        raise FormatError(f"no query adapter for format {fmt!r}")
    count = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item, ensure_ascii=False) + "\n")
            count += 1
    return count
