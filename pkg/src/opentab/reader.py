"""Final answer extraction from the SQL execution context.

The reader prompt carries the broad context: schema block, sampled rows,
the verified SQL, and its rendered execution result.
"""

from __future__ import annotations

from dataclasses import dataclass

from .coder import PromptTemplates
from .llm import CompletionRequest, Provider

ANSWER_SEPARATOR = "[SEP]"

TASK_QA = "qa"
TASK_FACT = "fact_verification"

VERDICT_SUPPORTS = "supports"
VERDICT_REFUTES = "refutes"


class UnparseableVerdict(ValueError):
    """Fact-verification output matched neither label; scored incorrect."""


@dataclass
class ReaderContext:
    schema_block: str
    query: str
    chosen_sql: str
    result_text: str


@dataclass
class Answer:
    items: list[str]
    verdict: str | None
    raw_output: str


def parse_answer(raw: str, task: str = TASK_QA) -> Answer:
    """Parse the provider output into answer items (and a verdict for facts)."""
    tail = raw.rsplit("A:", 1)[-1] if "A:" in raw else raw
    items = [seg.strip() for seg in tail.split(ANSWER_SEPARATOR)]
    items = [s for s in items if s] or [tail.strip()]
    if task == TASK_QA:
        return Answer(items=items, verdict=None, raw_output=raw)
    low = raw.lower()
    s_pos = low.find("support")
    r_pos = low.find("refut")
    if s_pos >= 0 and (r_pos < 0 or s_pos < r_pos):
        verdict = VERDICT_SUPPORTS
    elif r_pos >= 0:
        verdict = VERDICT_REFUTES
    else:
        raise UnparseableVerdict(f"no supports/refutes label in output: {raw[:80]!r}")
    return Answer(items=[verdict], verdict=verdict, raw_output=raw)


def assemble_reader_prompt(templates: PromptTemplates, context: ReaderContext, task: str) -> str:
    shots = templates.reader_shots_fact if task == TASK_FACT else templates.reader_shots_qa
    return (
        templates.reader_instruction
        + "\n\n"
        + shots
        + "\n\n\n"
        + context.schema_block
        + "\nQ: "
        + context.query
        + "\nSQLite:\n"
        + context.chosen_sql
        + "\nExecution Result:\n"
        + context.result_text
        + "\nA:"
    )


def read(
    provider: Provider,
    context: ReaderContext,
    task: str = TASK_QA,
    *,
    templates: PromptTemplates | None = None,
    request_defaults: dict | None = None,
) -> Answer:
    """One provider call over the broad context, then answer parsing."""
    templates = templates or PromptTemplates.load_default()
    prompt = assemble_reader_prompt(templates, context, task)
    request = CompletionRequest(prompt_text=prompt, **(request_defaults or {}))
    raw = provider.complete(request)
    return parse_answer(raw, task)
