"""SQL cascade generation: prompt assembly, output parsing, tiered verification.

One provider call yields three SQL programs of ascending complexity
(basic, intermediate, advanced); verification executes them most-complex
first and keeps the first one that returns a non-empty result.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .llm import CompletionRequest, Provider
from .sql_engine import ExecutionLimits, ExecutionOutcome, TableHandle, TableSession
from .tables import Table, sanitize_identifier

SQL_SEPARATOR = "[SQLSEP]"

TIER_BASIC = "basic"
TIER_INTERMEDIATE = "intermediate"
TIER_ADVANCED = "advanced"
VERIFY_ORDER = (TIER_ADVANCED, TIER_INTERMEDIATE, TIER_BASIC)


class EmptySqlOutput(ValueError):
    """The provider output contained no SQL segment."""


class PromptOverflow(ValueError):
    """The truncation ladder could not fit the prompt into the budget."""


_TEMPLATE_FILES = {
    "coder_instruction": "coder_instruction.txt",
    "coder_shots": "coder_shots.txt",
    "reader_instruction": "reader_instruction.txt",
    "reader_shots_qa": "reader_shots_qa.txt",
    "reader_shots_fact": "reader_shots_fact.txt",
}


@dataclass(frozen=True)
class PromptTemplates:
    coder_instruction: str
    coder_shots: str
    reader_instruction: str
    reader_shots_qa: str
    reader_shots_fact: str

    @classmethod
    def load_default(cls) -> "PromptTemplates":
        pkg = resources.files(__package__) / "prompts"
        return cls(**{k: (pkg / f).read_text(encoding="utf-8").strip("\n") for k, f in _TEMPLATE_FILES.items()})

    @classmethod
    def load_dir(cls, directory: str | Path) -> "PromptTemplates":
        directory = Path(directory)
        return cls(
            **{
                k: (directory / f).read_text(encoding="utf-8").strip("\n")
                for k, f in _TEMPLATE_FILES.items()
            }
        )


@dataclass
class SqlCascade:
    basic: str | None
    intermediate: str | None
    advanced: str | None
    raw_output: str

    def get(self, tier: str) -> str | None:
        return {TIER_BASIC: self.basic, TIER_INTERMEDIATE: self.intermediate, TIER_ADVANCED: self.advanced}[tier]

    def present_tiers(self) -> list[str]:
        return [t for t in (TIER_BASIC, TIER_INTERMEDIATE, TIER_ADVANCED) if self.get(t)]


@dataclass
class CascadeResult:
    chosen_tier: str | None
    chosen_sql: str | None
    outcome: ExecutionOutcome | None
    attempts: list[tuple[str, ExecutionOutcome]] = field(default_factory=list)


def _strip_fences(segment: str) -> str:
    text = segment.strip()
    if text.startswith("```"):
        lines = text.splitlines()
        lines = lines[1:]
        if lines and lines[-1].strip() == "```":
            lines = lines[:-1]
        text = "\n".join(lines).strip()
    elif text.endswith("```"):
        text = text[: -len("```")].strip()
    return text


def parse_sql_cascade(raw: str) -> SqlCascade:
    """Split provider output on [SQLSEP] into basic/intermediate/advanced."""
    segments = [_strip_fences(seg) for seg in raw.split(SQL_SEPARATOR)]
    segments = [seg for seg in segments if seg]
    if not segments:
        raise EmptySqlOutput("provider output contained no SQL")
    padded = segments[:3] + [None] * (3 - min(len(segments), 3))
    return SqlCascade(
        basic=padded[0], intermediate=padded[1], advanced=padded[2], raw_output=raw
    )


_CELL_FLAT = re.compile(r"[\t\n\r]+")


def _cell(text: str, max_chars: int | None) -> str:
    flat = _CELL_FLAT.sub(" ", text)
    if max_chars is not None and len(flat) > max_chars:
        flat = flat[:max_chars]
    return flat


def render_schema_block(
    table: Table,
    row_indices: list[int],
    table_name: str | None = None,
    max_cell_chars: int | None = None,
) -> str:
    """Emit the CREATE TABLE statement plus the example-rows comment block."""
    name = table_name or sanitize_identifier(table.title or table.id)
    lines = [f"CREATE TABLE {name}(", "\trow_id int,"]
    for i, col in enumerate(table.columns):
        tail = "," if i < len(table.columns) - 1 else ")"
        lines.append(f"\t{col.sql_name} {col.declared_type}{tail}")
    lines.append("/*")
    lines.append(f"{len(row_indices)} example rows:")
    lines.append(f"SELECT * FROM {name} LIMIT {len(row_indices)};")
    lines.append("\t".join(["row_id"] + table.sql_names))
    for ri in row_indices:
        cells = [str(ri)] + [_cell(c, max_cell_chars) for c in table.rows[ri]]
        lines.append("\t".join(cells))
    lines.append("*/")
    return "\n".join(lines)


def assemble_coder_prompt(templates: PromptTemplates, schema_blocks: list[str], query: str) -> str:
    target = "\n\n".join(schema_blocks)
    return (
        templates.coder_instruction
        + "\n\n"
        + templates.coder_shots
        + "\n\n\n"
        + target
        + "\nQ: "
        + query
        + "\nSQLite:"
    )


@dataclass
class TargetTable:
    """One candidate table as seen by the coder: data, relation, sampled rows."""

    table: Table
    handle: TableHandle
    row_indices: list[int]


@dataclass
class PromptBuild:
    prompt: str
    schema_blocks: list[str]
    rows_used: list[list[int]]
    cell_chars: int | None


def build_coder_prompt(
    templates: PromptTemplates,
    targets: list[TargetTable],
    query: str,
    char_budget: int | None = None,
) -> PromptBuild:
    """Assemble the coder prompt, shedding rows (then truncating cells) to fit.

    Rows are dropped one at a time, last target's last row first; before
    giving up on row content entirely the descent is retried with cell
    values truncated to 64 characters, ending at a schema-only prompt.
    Budgets are measured in characters for determinism.
    """
    row_slots = [(ti, pos) for ti, t in enumerate(targets) for pos in range(len(t.row_indices))]
    total = len(row_slots)

    def _attempt(keep: int, max_chars: int | None) -> PromptBuild:
        kept = row_slots[:keep]
        rows_used = [
            [t.row_indices[pos] for tj, pos in kept if tj == ti]
            for ti, t in enumerate(targets)
        ]
        blocks = [
            render_schema_block(t.table, rows, t.handle.sql_table_name, max_chars)
            for t, rows in zip(targets, rows_used)
        ]
        prompt = assemble_coder_prompt(templates, blocks, query)
        return PromptBuild(prompt, blocks, rows_used, max_chars)

    if char_budget is None:
        return _attempt(total, None)
    ladder = [(keep, None) for keep in range(total, 0, -1)]
    ladder += [(keep, 64) for keep in range(total, -1, -1)]
    for keep, max_chars in ladder:
        build = _attempt(keep, max_chars)
        if len(build.prompt) <= char_budget:
            return build
    raise PromptOverflow(
        f"prompt does not fit {char_budget} chars even with no rows and truncated cells"
    )


def run_cascade(
    session: TableSession, cascade: SqlCascade, limits: ExecutionLimits = ExecutionLimits()
) -> CascadeResult:
    """Verify tiers most-complex first; stop at the first Ok execution."""
    attempts: list[tuple[str, ExecutionOutcome]] = []
    for tier in VERIFY_ORDER:
        sql = cascade.get(tier)
        if not sql:
            continue
        outcome = session.execute(sql, limits)
        attempts.append((tier, outcome))
        if outcome.ok:
            return CascadeResult(tier, sql, outcome, attempts)
    return CascadeResult(None, None, None, attempts)


@dataclass
class CascadeRun:
    build: PromptBuild
    cascade: SqlCascade | None
    result: CascadeResult


def generate_and_run_cascade(
    provider: Provider,
    targets: TargetTable | list[TargetTable],
    query: str,
    limits: ExecutionLimits = ExecutionLimits(),
    *,
    templates: PromptTemplates | None = None,
    request_defaults: dict | None = None,
    char_budget: int | None = None,
) -> CascadeRun:
    """One provider call for the full cascade, then tiered verification.

    All targets must share one session (multiple targets = joint prompting).
    An empty provider output maps to a result with no chosen tier.
    """
    if isinstance(targets, TargetTable):
        targets = [targets]
    templates = templates or PromptTemplates.load_default()
    build = build_coder_prompt(templates, targets, query, char_budget)
    request = CompletionRequest(prompt_text=build.prompt, **(request_defaults or {}))
    raw = provider.complete(request)
    try:
        cascade = parse_sql_cascade(raw)
    except EmptySqlOutput:
        return CascadeRun(build, None, CascadeResult(None, None, None, []))
    session = targets[0].handle.session
    return CascadeRun(build, cascade, run_cascade(session, cascade, limits))
