"""Okapi BM25 indexing over tables and BM25 row selection within a table.

Uses the +1-smoothed IDF variant, k1=1.5, b=0.75, no stemming and no
stopword removal, so rankings stay oracle-checkable.
"""

from __future__ import annotations

import gzip
import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .tables import Table, TableCorpus

DEFAULT_K1 = 1.5
DEFAULT_B = 0.75
DOC_FIELD_MODES = ("title_only", "title_schema", "full")

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)

_INDEX_FORMAT = "opentab-bm25"
_INDEX_VERSION = 1


class EmptyCorpus(ValueError):
    """An index cannot be built over zero tables."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every non-alphanumeric character."""
    return _TOKEN.findall(text.lower())


def _idf(doc_count: int, df: int) -> float:
    return math.log(1.0 + (doc_count - df + 0.5) / (df + 0.5))


def _term_score(tf: int, idf: float, dl: int, avg_dl: float, k1: float, b: float) -> float:
    norm = k1 * (1.0 - b + b * dl / avg_dl) if avg_dl > 0 else k1
    return idf * tf * (k1 + 1.0) / (tf + norm)


@dataclass(frozen=True)
class RetrievalResult:
    table_id: str
    score: float
    rank: int


def table_document_text(table: Table, fields: str = "full") -> str:
    """Flatten one table into the text indexed for retrieval."""
    if fields not in DOC_FIELD_MODES:
        raise ValueError(f"unknown field mode: {fields!r}")
    parts = [table.title]
    if fields in ("title_schema", "full"):
        parts.extend(table.sql_names)
    if fields == "full":
        for row in table.rows:
            parts.extend(row)
    return " ".join(parts)


class Bm25Index:
    """Immutable inverted index over table documents.

    Documents are stored in ascending table-id order, so the integer doc
    index doubles as the ascending-id tie-break key.
    """

    def __init__(
        self,
        doc_ids: list[str],
        doc_lengths: list[int],
        postings: dict[str, list[tuple[int, int]]],
        k1: float = DEFAULT_K1,
        b: float = DEFAULT_B,
        fields: str = "full",
    ):
        if not doc_ids:
            raise EmptyCorpus("index must contain at least one document")
        if sorted(doc_ids) != doc_ids:
            raise ValueError("doc_ids must be sorted ascending")
        self.doc_ids = doc_ids
        self.doc_lengths = doc_lengths
        self.postings = postings
        self.k1 = k1
        self.b = b
        self.fields = fields
        self.avg_doc_length = sum(doc_lengths) / len(doc_lengths)

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    def scores(self, query: str) -> dict[int, float]:
        """BM25 score per doc index, for docs sharing a term with the query."""
        acc: dict[int, float] = {}
        for term in tokenize(query):
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = _idf(self.doc_count, len(plist))
            for di, tf in plist:
                acc[di] = acc.get(di, 0.0) + _term_score(
                    tf, idf, self.doc_lengths[di], self.avg_doc_length, self.k1, self.b
                )
        return acc

    def retrieve(self, query: str, k: int) -> list[RetrievalResult]:
        if k < 1:
            raise ValueError("k must be >= 1")
        scored = self.scores(query)
        ranked = sorted(scored.items(), key=lambda item: (-item[1], item[0]))[:k]
        picks: list[tuple[int, float]] = list(ranked)
        if len(picks) < k:
            # Fill with zero-score documents in ascending-id order.
            have = {di for di, _ in picks}
            for di in range(self.doc_count):
                if len(picks) >= k:
                    break
                if di not in have:
                    picks.append((di, 0.0))
        return [
            RetrievalResult(self.doc_ids[di], score, rank)
            for rank, (di, score) in enumerate(picks, start=1)
        ]

    def save(self, path: str | Path) -> None:
        """Persist to a single line-delimited file (gzipped iff *.gz)."""
        path = Path(path)
        opener = gzip.open if path.suffix == ".gz" else open
        with opener(path, "wt", encoding="utf-8") as fh:
            header = {
                "format": _INDEX_FORMAT,
                "version": _INDEX_VERSION,
                "k1": self.k1,
                "b": self.b,
                "fields": self.fields,
                "doc_count": self.doc_count,
                "avg_doc_length": self.avg_doc_length,
            }
            fh.write(json.dumps(header, ensure_ascii=False) + "\n")
            fh.write(json.dumps({"doc_ids": self.doc_ids}, ensure_ascii=False) + "\n")
            fh.write(json.dumps({"doc_lengths": self.doc_lengths}) + "\n")
            for term in sorted(self.postings):
                plist = [[di, tf] for di, tf in self.postings[term]]
                fh.write(json.dumps({"t": term, "p": plist}, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Bm25Index":
        path = Path(path)
        opener = gzip.open if path.suffix == ".gz" else open
        with opener(path, "rt", encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != _INDEX_FORMAT or header.get("version") != _INDEX_VERSION:
                raise ValueError(f"not a recognized index file: {path}")
            doc_ids = json.loads(fh.readline())["doc_ids"]
            doc_lengths = json.loads(fh.readline())["doc_lengths"]
            postings: dict[str, list[tuple[int, int]]] = {}
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                postings[rec["t"]] = [(di, tf) for di, tf in rec["p"]]
        return cls(
            doc_ids,
            doc_lengths,
            postings,
            k1=header["k1"],
            b=header["b"],
            fields=header.get("fields", "full"),
        )


def build_index(
    corpus: TableCorpus,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
    fields: str = "full",
) -> Bm25Index:
    """Flatten each table to one document and index the corpus."""
    if len(corpus) == 0:
        raise EmptyCorpus("cannot index an empty corpus")
    doc_ids: list[str] = []
    doc_lengths: list[int] = []
    postings: dict[str, list[tuple[int, int]]] = {}
    for di, table in enumerate(corpus):  # corpus iterates in ascending-id order
        doc_ids.append(table.id)
        tokens = tokenize(table_document_text(table, fields))
        doc_lengths.append(len(tokens))
        for term, tf in sorted(Counter(tokens).items()):
            postings.setdefault(term, []).append((di, tf))
    return Bm25Index(doc_ids, doc_lengths, postings, k1=k1, b=b, fields=fields)


def retrieve_top_k(index: Bm25Index, query: str, k: int) -> list[RetrievalResult]:
    return index.retrieve(query, k)


def select_rows(
    table: Table,
    query: str,
    k_rows: int,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> list[int]:
    """Pick the k_rows most query-relevant row indices of one table.

    Rows are scored with BM25 over the table's own rows (cells joined by
    spaces); ties keep original row order. When k_rows covers the whole
    table, all rows are returned in original order.
    """
    if k_rows < 1:
        raise ValueError("k_rows must be >= 1")
    n = len(table.rows)
    if n == 0:
        return []
    if k_rows >= n:
        return list(range(n))
    docs = [tokenize(" ".join(row)) for row in table.rows]
    avg_dl = sum(len(d) for d in docs) / n
    df: Counter[str] = Counter()
    for d in docs:
        df.update(set(d))
    query_tokens = tokenize(query)
    scores = [0.0] * n
    for i, d in enumerate(docs):
        tf = Counter(d)
        for term in query_tokens:
            if tf[term]:
                scores[i] += _term_score(tf[term], _idf(n, df[term]), len(d), avg_dl, k1, b)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    return order[:k_rows]
