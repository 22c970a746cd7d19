"""End-to-end query answering: closed-domain flow and the open-domain
strategies (sequential, joint, generative-rerank) over a pluggable
query-to-SQL similarity scorer.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import requests

from . import coder as coder_mod
from . import reader as reader_mod
from .coder import (
    CascadeRun,
    PromptOverflow,
    PromptTemplates,
    TargetTable,
    generate_and_run_cascade,
)
from .llm import ApiError, MissingTranscriptEntry, NetworkError, Provider, ProviderError
from .reader import TASK_FACT, TASK_QA, Answer, ReaderContext, UnparseableVerdict
from .retrieval import Bm25Index, RetrievalResult, select_rows, tokenize
from .sql_engine import EngineError, ExecutionLimits, TableSession, render_result
from .tables import TableCorpus

STRATEGY_CLOSED = "closed"
STRATEGY_SEQUENTIAL = "sequential"
STRATEGY_JOINT = "joint"
STRATEGY_GRSR = "grsr"
STRATEGY_TAGS = (STRATEGY_CLOSED, STRATEGY_SEQUENTIAL, STRATEGY_JOINT, STRATEGY_GRSR)

FAILURE_ALL_SQL = "AllSqlFailed"
FAILURE_PROVIDER = "ProviderError"
FAILURE_OVERFLOW = "PromptOverflow"
FAILURE_VERDICT = "UnparseableVerdict"
FAILURE_ENGINE = "EngineError"

_PROVIDER_ERRORS = (NetworkError, ApiError, MissingTranscriptEntry, ProviderError)


class ScorerUnavailable(RuntimeError):
    """The configured similarity scorer cannot be reached."""


@dataclass(frozen=True)
class Strategy:
    tag: str
    k: int = 10

    def __post_init__(self):
        if self.tag not in STRATEGY_TAGS:
            raise ValueError(f"unknown strategy: {self.tag!r}")
        if self.tag != STRATEGY_CLOSED and self.k < 1:
            raise ValueError("open-domain strategies need k >= 1")


class SimilarityScorer(Protocol):
    def score_pairs(self, pairs: Sequence[tuple[str, str]]) -> list[float]: ...


# Tokens of a SQL string that are grammar, not content; what remains
# approximates the literals and identifiers the query could overlap with.
_SQL_GRAMMAR_TOKENS = frozenset(
    """
    select from where and or not like as on join inner left right outer cross
    group by order limit offset distinct count sum avg min max cast replace
    substr instr int integer text real when case then else end with union all
    desc asc having in is null between exists length lower upper trim round
    abs coalesce values
    """.split()
)


def lexical_score(pairs: Sequence[tuple[str, str]]) -> list[float]:
    """Fallback scorer: fraction of query tokens present in the SQL's content tokens."""
    scores = []
    for query, sql in pairs:
        q_tokens = set(tokenize(query))
        sql_tokens = set(tokenize(sql)) - _SQL_GRAMMAR_TOKENS
        scores.append(len(q_tokens & sql_tokens) / len(q_tokens) if q_tokens else 0.0)
    return scores


class LexicalScorer:
    def score_pairs(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        return lexical_score(pairs)


class RemoteScorer:
    """Client for the remote scoring service's POST /score contract."""

    def __init__(self, url: str, timeout_s: float = 30.0):
        self.url = url.rstrip("/")
        self.timeout_s = timeout_s

    def score_pairs(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        try:
            resp = requests.post(
                self.url + "/score",
                json={"pairs": [[q, s] for q, s in pairs]},
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise ScorerUnavailable(str(exc)) from exc
        if resp.status_code != 200:
            raise ScorerUnavailable(f"scorer returned HTTP {resp.status_code}")
        try:
            scores = resp.json()["scores"]
        except (ValueError, KeyError) as exc:
            raise ScorerUnavailable(f"malformed scorer response: {exc}") from exc
        if len(scores) != len(pairs):
            raise ScorerUnavailable("scorer returned wrong number of scores")
        return [float(s) for s in scores]


@dataclass
class PerTableRun:
    cascade: coder_mod.SqlCascade | None = None
    result: coder_mod.CascadeResult | None = None
    score: float | None = None


@dataclass
class ReasoningTrace:
    query_id: str
    strategy: Strategy
    candidates: list[RetrievalResult]
    per_table: dict[str, PerTableRun] = field(default_factory=dict)
    chosen_table_id: str | None = None
    answer: Answer | None = None
    failure: str | None = None
    failure_detail: str | None = None
    multi_table: bool = False
    scorer_fallback: bool = False
    used_fallback_rows: bool = False
    config: dict | None = None

    def to_dict(self) -> dict:
        def outcome_dict(outcome):
            if outcome is None:
                return None
            return {
                "status": outcome.status.value,
                "columns": outcome.result.columns if outcome.result else None,
                "rows": outcome.result.rows if outcome.result else None,
                "error_message": outcome.error_message,
            }

        def run_dict(run: PerTableRun):
            cascade = None
            if run.cascade is not None:
                cascade = {
                    "basic": run.cascade.basic,
                    "intermediate": run.cascade.intermediate,
                    "advanced": run.cascade.advanced,
                    "raw_output": run.cascade.raw_output,
                }
            result = None
            if run.result is not None:
                result = {
                    "chosen_tier": run.result.chosen_tier,
                    "chosen_sql": run.result.chosen_sql,
                    "outcome": outcome_dict(run.result.outcome),
                    "attempts": [
                        {"tier": tier, **outcome_dict(outcome)}
                        for tier, outcome in run.result.attempts
                    ],
                }
            return {"cascade": cascade, "result": result, "score": run.score}

        answer = None
        if self.answer is not None:
            answer = {
                "items": self.answer.items,
                "verdict": self.answer.verdict,
                "raw_output": self.answer.raw_output,
            }
        return {
            "query_id": self.query_id,
            "strategy": {"tag": self.strategy.tag, "k": self.strategy.k},
            "candidates": [
                {"rank": c.rank, "table_id": c.table_id, "score": c.score}
                for c in self.candidates
            ],
            "per_table": {tid: run_dict(run) for tid, run in self.per_table.items()},
            "chosen_table_id": self.chosen_table_id,
            "answer": answer,
            "failure": self.failure,
            "failure_detail": self.failure_detail,
            "multi_table": self.multi_table,
            "scorer_fallback": self.scorer_fallback,
            "used_fallback_rows": self.used_fallback_rows,
            "config": self.config,
        }


@dataclass
class PipelineSettings:
    k_rows: int = 3
    limits: ExecutionLimits = field(default_factory=ExecutionLimits)
    char_budget: int | None = 16000
    model_name: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    max_output_tokens: int = 512
    fallback_rows: bool = False

    def request_defaults(self) -> dict:
        return {
            "model_name": self.model_name,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
        }


def _referenced_table_ids(sql: str, handles) -> list[str]:
    """Table ids referenced by the SQL, ordered by first mention."""
    low = sql.lower()
    hits = []
    for handle in handles:
        m = re.search(rf"\b{re.escape(handle.sql_table_name)}\b", low)
        if m:
            hits.append((m.start(), handle.table_id))
    hits.sort()
    return [tid for _, tid in hits]


class ReasoningPipeline:
    """Binds corpus, retriever, provider, and scorer into query answering."""

    def __init__(
        self,
        corpus: TableCorpus,
        index: Bm25Index | None = None,
        provider: Provider | None = None,
        scorer: SimilarityScorer | None = None,
        templates: PromptTemplates | None = None,
        settings: PipelineSettings | None = None,
    ):
        self.corpus = corpus
        self.index = index
        self.provider = provider
        self.scorer = scorer or LexicalScorer()
        self.templates = templates or PromptTemplates.load_default()
        self.settings = settings or PipelineSettings()

    # -- composition helpers -------------------------------------------------

    def retrieve(self, query: str, k: int) -> list[RetrievalResult]:
        if self.index is None:
            raise ValueError("pipeline has no index; open-domain strategies need one")
        return self.index.retrieve(query, k)

    def _target(self, session: TableSession, table_id: str, query: str) -> TargetTable:
        table = self.corpus.get(table_id)
        rows = select_rows(table, query, self.settings.k_rows)
        handle = session.add_table(table)
        return TargetTable(table=table, handle=handle, row_indices=rows)

    def _cascade(self, targets: TargetTable | list[TargetTable], query: str) -> CascadeRun:
        return generate_and_run_cascade(
            self.provider,
            targets,
            query,
            self.settings.limits,
            templates=self.templates,
            request_defaults=self.settings.request_defaults(),
            char_budget=self.settings.char_budget,
        )

    def _read(self, schema_block: str, query: str, run: CascadeRun, task: str) -> Answer:
        context = ReaderContext(
            schema_block=schema_block,
            query=query,
            chosen_sql=run.result.chosen_sql,
            result_text=render_result(
                run.result.outcome, self.settings.limits.max_result_rows
            ),
        )
        return reader_mod.read(
            self.provider,
            context,
            task,
            templates=self.templates,
            request_defaults=self.settings.request_defaults(),
        )

    def _fallback_read(
        self, trace: ReasoningTrace, target: TargetTable, query: str, task: str
    ) -> None:
        """Non-faithful optional path: read from sampled rows when all SQL failed."""
        header = ["row_id"] + target.table.sql_names
        lines = ["\t".join(header)]
        for ri in target.row_indices:
            lines.append("\t".join([str(ri)] + list(target.table.rows[ri])))
        context = ReaderContext(
            schema_block=render_schema_block_for(target),
            query=query,
            chosen_sql="",
            result_text="\n".join(lines),
        )
        answer = reader_mod.read(
            self.provider,
            context,
            task,
            templates=self.templates,
            request_defaults=self.settings.request_defaults(),
        )
        trace.answer = answer
        trace.chosen_table_id = target.table.id
        trace.used_fallback_rows = True
        trace.failure = None

    # -- strategies ----------------------------------------------------------

    def answer_closed(
        self, query: str, gold_table_id: str, task: str = TASK_QA, query_id: str = "q"
    ) -> ReasoningTrace:
        candidates = [RetrievalResult(gold_table_id, 0.0, 1)]
        trace = ReasoningTrace(query_id, Strategy(STRATEGY_CLOSED, 1), candidates)
        with TableSession() as session:
            try:
                target = self._target(session, gold_table_id, query)
                run = self._cascade(target, query)
                trace.per_table[gold_table_id] = PerTableRun(run.cascade, run.result)
                if run.result.chosen_tier is None:
                    if self.settings.fallback_rows:
                        self._fallback_read(trace, target, query, task)
                    else:
                        trace.failure = FAILURE_ALL_SQL
                    return trace
                trace.chosen_table_id = gold_table_id
                trace.answer = self._read(run.build.schema_blocks[0], query, run, task)
            except UnparseableVerdict as exc:
                trace.answer = None
                trace.failure = FAILURE_VERDICT
                trace.failure_detail = str(exc)
            except PromptOverflow as exc:
                trace.failure = FAILURE_OVERFLOW
                trace.failure_detail = str(exc)
            except EngineError as exc:
                trace.failure = FAILURE_ENGINE
                trace.failure_detail = str(exc)
            except _PROVIDER_ERRORS as exc:
                trace.failure = FAILURE_PROVIDER
                trace.failure_detail = str(exc)
        return trace

    def answer_sequential(
        self,
        query: str,
        candidates: list[RetrievalResult],
        task: str = TASK_QA,
        query_id: str = "q",
    ) -> ReasoningTrace:
        trace = ReasoningTrace(
            query_id, Strategy(STRATEGY_SEQUENTIAL, len(candidates)), list(candidates)
        )
        try:
            for cand in sorted(candidates, key=lambda c: c.rank):
                with TableSession() as session:
                    target = self._target(session, cand.table_id, query)
                    try:
                        run = self._cascade(target, query)
                    except PromptOverflow as exc:
                        trace.per_table[cand.table_id] = PerTableRun()
                        trace.failure_detail = str(exc)
                        continue
                    trace.per_table[cand.table_id] = PerTableRun(run.cascade, run.result)
                    if run.result.chosen_tier is None:
                        continue
                    trace.chosen_table_id = cand.table_id
                    trace.answer = self._read(run.build.schema_blocks[0], query, run, task)
                    return trace
            trace.failure = FAILURE_ALL_SQL
        except UnparseableVerdict as exc:
            trace.answer = None
            trace.failure = FAILURE_VERDICT
            trace.failure_detail = str(exc)
        except EngineError as exc:
            trace.failure = FAILURE_ENGINE
            trace.failure_detail = str(exc)
        except _PROVIDER_ERRORS as exc:
            trace.failure = FAILURE_PROVIDER
            trace.failure_detail = str(exc)
        return trace

    def answer_joint(
        self,
        query: str,
        candidates: list[RetrievalResult],
        task: str = TASK_QA,
        query_id: str = "q",
    ) -> ReasoningTrace:
        trace = ReasoningTrace(
            query_id, Strategy(STRATEGY_JOINT, len(candidates)), list(candidates)
        )
        with TableSession() as session:
            try:
                targets = [
                    self._target(session, c.table_id, query)
                    for c in sorted(candidates, key=lambda c: c.rank)
                ]
                run = self._cascade(targets, query)
                shared = PerTableRun(run.cascade, run.result)
                for target in targets:
                    trace.per_table[target.table.id] = shared
                if run.result.chosen_tier is None:
                    if self.settings.fallback_rows and targets:
                        self._fallback_read(trace, targets[0], query, task)
                    else:
                        trace.failure = FAILURE_ALL_SQL
                    return trace
                referenced = _referenced_table_ids(
                    run.result.chosen_sql, [t.handle for t in targets]
                )
                trace.multi_table = len(referenced) > 1
                trace.chosen_table_id = referenced[0] if referenced else targets[0].table.id
                schema_block = "\n\n".join(run.build.schema_blocks)
                trace.answer = self._read(schema_block, query, run, task)
            except UnparseableVerdict as exc:
                trace.answer = None
                trace.failure = FAILURE_VERDICT
                trace.failure_detail = str(exc)
            except PromptOverflow as exc:
                trace.failure = FAILURE_OVERFLOW
                trace.failure_detail = str(exc)
            except EngineError as exc:
                trace.failure = FAILURE_ENGINE
                trace.failure_detail = str(exc)
            except _PROVIDER_ERRORS as exc:
                trace.failure = FAILURE_PROVIDER
                trace.failure_detail = str(exc)
        return trace

    def answer_grsr(
        self,
        query: str,
        candidates: list[RetrievalResult],
        task: str = TASK_QA,
        query_id: str = "q",
    ) -> ReasoningTrace:
        trace = ReasoningTrace(
            query_id, Strategy(STRATEGY_GRSR, len(candidates)), list(candidates)
        )
        ordered = sorted(candidates, key=lambda c: c.rank)
        verified: list[tuple[RetrievalResult, CascadeRun, TargetTable, TableSession]] = []
        sessions: list[TableSession] = []
        try:
            try:
                for cand in ordered:
                    session = TableSession()
                    sessions.append(session)
                    target = self._target(session, cand.table_id, query)
                    try:
                        run = self._cascade(target, query)
                    except PromptOverflow as exc:
                        trace.per_table[cand.table_id] = PerTableRun()
                        trace.failure_detail = str(exc)
                        continue
                    trace.per_table[cand.table_id] = PerTableRun(run.cascade, run.result)
                    if run.result.chosen_tier is not None:
                        verified.append((cand, run, target, session))
                if not verified:
                    if self.settings.fallback_rows and ordered:
                        with TableSession() as fb_session:
                            fb_target = self._target(fb_session, ordered[0].table_id, query)
                            self._fallback_read(trace, fb_target, query, task)
                    else:
                        trace.failure = FAILURE_ALL_SQL
                    return trace

                pairs = [(query, run.result.chosen_sql) for _, run, _, _ in verified]
                try:
                    scores = self.scorer.score_pairs(pairs)
                except ScorerUnavailable:
                    scores = lexical_score(pairs)
                    trace.scorer_fallback = True
                for (cand, _, _, _), score in zip(verified, scores):
                    trace.per_table[cand.table_id].score = score

                # Argmax, ties broken by better (lower) retriever rank.
                best_i = min(
                    range(len(verified)),
                    key=lambda i: (-scores[i], verified[i][0].rank),
                )
                cand, run, target, _ = verified[best_i]
                trace.chosen_table_id = cand.table_id
                trace.answer = self._read(run.build.schema_blocks[0], query, run, task)
            except UnparseableVerdict as exc:
                trace.answer = None
                trace.failure = FAILURE_VERDICT
                trace.failure_detail = str(exc)
            except EngineError as exc:
                trace.failure = FAILURE_ENGINE
                trace.failure_detail = str(exc)
            except _PROVIDER_ERRORS as exc:
                trace.failure = FAILURE_PROVIDER
                trace.failure_detail = str(exc)
            return trace
        finally:
            for session in sessions:
                session.close()

    def answer(self, query_id: str, query: str, strategy: Strategy,
               gold_table_ids: Sequence[str] = (), task: str = TASK_QA) -> ReasoningTrace:
        """Dispatch one query through retrieval (if open-domain) and a strategy."""
        if strategy.tag == STRATEGY_CLOSED:
            if not gold_table_ids:
                raise ValueError("closed strategy needs a gold table id")
            return self.answer_closed(query, gold_table_ids[0], task, query_id)
        candidates = self.retrieve(query, strategy.k)
        if strategy.tag == STRATEGY_SEQUENTIAL:
            return self.answer_sequential(query, candidates, task, query_id)
        if strategy.tag == STRATEGY_JOINT:
            return self.answer_joint(query, candidates, task, query_id)
        return self.answer_grsr(query, candidates, task, query_id)


def render_schema_block_for(target: TargetTable) -> str:
    return coder_mod.render_schema_block(
        target.table, target.row_indices, target.handle.sql_table_name
    )
