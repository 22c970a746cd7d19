"""Metrics and query-set bindings: execution accuracy with semantic match,
evidence-aware fact-verification accuracy, and retrieval recall@k.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .orchestrator import FAILURE_PROVIDER, ReasoningTrace
from .reader import TASK_FACT, TASK_QA
from .retrieval import RetrievalResult


class JoinError(KeyError):
    """Trace ids and query-record ids do not line up."""


@dataclass(frozen=True)
class QueryRecord:
    id: str
    text: str
    task: str = TASK_QA
    gold_table_ids: tuple[str, ...] = ()
    gold_answers: tuple[str, ...] = ()
    gold_label: str | None = None

    def __post_init__(self):
        if not self.gold_table_ids:
            raise ValueError(f"query {self.id!r}: gold_table_ids must be non-empty")
        if self.task == TASK_QA:
            if not self.gold_answers or self.gold_label is not None:
                raise ValueError(f"query {self.id!r}: QA records carry gold_answers only")
        elif self.task == TASK_FACT:
            if self.gold_label is None or self.gold_answers:
                raise ValueError(f"query {self.id!r}: fact records carry gold_label only")
        else:
            raise ValueError(f"query {self.id!r}: unknown task {self.task!r}")


def load_queries(path: str | Path) -> list[QueryRecord]:
    """Read the JSON-lines query file format."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            task = rec.get("task", TASK_QA)
            records.append(
                QueryRecord(
                    id=str(rec["id"]),
                    text=rec["question"],
                    task=task,
                    gold_table_ids=tuple(str(t) for t in rec["gold_table_ids"]),
                    gold_answers=tuple(str(a) for a in rec.get("gold_answers", ())),
                    gold_label=(
                        str(rec["gold_label"]).lower() if rec.get("gold_label") is not None else None
                    ),
                )
            )
    return records


def sample_queries(records: Sequence[QueryRecord], n: int, seed: int = 42) -> list[QueryRecord]:
    """Reproducible budget sampling over sorted query ids."""
    ordered = sorted(records, key=lambda r: r.id)
    if n >= len(ordered):
        return list(ordered)
    picked = random.Random(seed).sample(ordered, n)
    return sorted(picked, key=lambda r: r.id)


_DASH_MAP = {ord(ch): "-" for ch in "‐‑‒–—―−"}
_THOUSANDS = re.compile(r"^[+-]?\d{1,3}(?:,\d{3})+(?:\.\d+)?$")
_NUMBER = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$")
_EDGE_PUNCT = " \t\"'`.,;:!?()[]{}%"


def normalize_answer(text: str) -> str:
    """Canonical comparison form: case, dashes, separators, numbers."""
    s = text.lower().translate(_DASH_MAP)
    tokens = s.split()
    tokens = [t.replace(",", "") if _THOUSANDS.match(t) else t for t in tokens]
    s = " ".join(tokens).strip(_EDGE_PUNCT)
    s = " ".join(s.split())
    if _NUMBER.match(s):
        value = float(s)
        if value.is_integer() and abs(value) < 1e16:
            return str(int(value))
        return repr(value)
    return s


def _as_number(normalized: str) -> float | None:
    return float(normalized) if _NUMBER.match(normalized) else None


def _items_match(pred: str, gold: str) -> bool:
    p, g = normalize_answer(pred), normalize_answer(gold)
    pn, gn = _as_number(p), _as_number(g)
    if pn is not None and gn is not None:
        return math.isclose(pn, gn, rel_tol=1e-6, abs_tol=0.0)
    return p == g


def answers_match(pred_items: Sequence[str], gold_answers: Sequence[str]) -> bool:
    """Order-insensitive multiset equality with numeric tolerance."""
    if len(pred_items) != len(gold_answers):
        return False
    remaining = list(gold_answers)
    for pred in pred_items:
        for i, gold in enumerate(remaining):
            if _items_match(pred, gold):
                del remaining[i]
                break
        else:
            return False
    return True


def _join(
    traces: Iterable[ReasoningTrace], records: Sequence[QueryRecord]
) -> list[tuple[ReasoningTrace, QueryRecord]]:
    by_id = {t.query_id: t for t in traces}
    record_ids = {r.id for r in records}
    if set(by_id) != record_ids:
        missing = sorted(record_ids - set(by_id))[:5]
        extra = sorted(set(by_id) - record_ids)[:5]
        raise JoinError(f"trace/record id mismatch (missing={missing}, extra={extra})")
    return [(by_id[r.id], r) for r in records]


def query_correct(trace: ReasoningTrace, record: QueryRecord) -> bool:
    """Per-query verdict under the task's metric; abstentions score 0."""
    if trace.answer is None:
        return False
    if record.task == TASK_FACT:
        return (
            trace.answer.verdict == record.gold_label
            and trace.chosen_table_id in record.gold_table_ids
        )
    return answers_match(trace.answer.items, record.gold_answers)


def execution_accuracy(
    traces: Iterable[ReasoningTrace], records: Sequence[QueryRecord]
) -> float:
    """Mean semantic-match score over QA queries."""
    joined = _join(traces, records)
    if not joined:
        return 0.0
    hits = sum(
        1
        for trace, record in joined
        if trace.answer is not None and answers_match(trace.answer.items, record.gold_answers)
    )
    return hits / len(joined)


def feverous_score(
    traces: Iterable[ReasoningTrace], records: Sequence[QueryRecord]
) -> float:
    """Credit only a correct label grounded in the gold evidence table."""
    joined = _join(traces, records)
    if not joined:
        return 0.0
    hits = 0
    for trace, record in joined:
        if trace.answer is None:
            continue
        if (
            trace.answer.verdict == record.gold_label
            and trace.chosen_table_id in record.gold_table_ids
        ):
            hits += 1
    return hits / len(joined)


def recall_at_k(
    result_lists: Sequence[Sequence[RetrievalResult]],
    records: Sequence[QueryRecord],
    k: int,
) -> float:
    """Fraction of queries whose gold table appears in the top-k results."""
    if len(result_lists) != len(records):
        raise JoinError("one result list per query record is required")
    if not records:
        return 0.0
    hits = 0
    for results, record in zip(result_lists, records):
        top = {r.table_id for r in results if r.rank <= k}
        if any(g in top for g in record.gold_table_ids):
            hits += 1
    return hits / len(records)


@dataclass
class EvalReport:
    metrics: dict[str, float]
    per_query: list[dict]
    counts: dict[str, int]
    config: dict | None = None

    def to_dict(self) -> dict:
        return {
            "metrics": self.metrics,
            "counts": self.counts,
            "per_query": self.per_query,
            "config": self.config,
        }


def evaluate_traces(
    traces: Sequence[ReasoningTrace], records: Sequence[QueryRecord]
) -> EvalReport:
    """Score completed traces and tally answered/abstained/provider-error counts."""
    joined = _join(traces, records)
    answered = abstained = provider_errors = 0
    per_query = []
    for trace, record in joined:
        if trace.answer is not None:
            answered += 1
        elif trace.failure == FAILURE_PROVIDER:
            provider_errors += 1
        else:
            abstained += 1
        per_query.append(
            {
                "id": record.id,
                "task": record.task,
                "correct": query_correct(trace, record),
                "predicted": trace.answer.items if trace.answer else None,
                "verdict": trace.answer.verdict if trace.answer else None,
                "chosen_table_id": trace.chosen_table_id,
                "failure": trace.failure,
            }
        )
    metrics: dict[str, float] = {}
    qa = [(t, r) for t, r in joined if r.task == TASK_QA]
    fact = [(t, r) for t, r in joined if r.task == TASK_FACT]
    if qa:
        metrics["execution_accuracy"] = execution_accuracy(
            [t for t, _ in qa], [r for _, r in qa]
        )
    if fact:
        metrics["feverous_accuracy"] = feverous_score(
            [t for t, _ in fact], [r for _, r in fact]
        )
    counts = {
        "answered": answered,
        "abstained": abstained,
        "provider_errors": provider_errors,
    }
    return EvalReport(metrics=metrics, per_query=per_query, counts=counts)
