"""Open-domain table reasoning: retrieve candidate tables, generate and
execution-verify SQL cascades, rerank by query similarity, and read out a
grounded answer."""

from .coder import (
    CascadeResult,
    PromptTemplates,
    SqlCascade,
    generate_and_run_cascade,
    parse_sql_cascade,
    render_schema_block,
)
from .evaluation import (
    EvalReport,
    QueryRecord,
    execution_accuracy,
    feverous_score,
    normalize_answer,
    recall_at_k,
)
from .llm import CompletionRequest, HttpChatProvider, TranscriptRecorder, TranscriptReplayer
from .orchestrator import (
    LexicalScorer,
    ReasoningPipeline,
    ReasoningTrace,
    RemoteScorer,
    Strategy,
    lexical_score,
)
from .reader import Answer, ReaderContext, parse_answer, read
from .retrieval import Bm25Index, RetrievalResult, build_index, retrieve_top_k, select_rows, tokenize
from .sql_engine import (
    ExecutionLimits,
    ExecutionOutcome,
    ExecutionStatus,
    TableHandle,
    TableSession,
    execute,
    materialize,
    render_result,
)
from .tables import (
    ColumnSpec,
    Table,
    TableCorpus,
    ingest_corpus,
    normalize_table,
    sanitize_identifier,
)

__version__ = "0.1.0"
