"""Command-line operator surface: ingest, index, retrieve, ask, eval."""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import adapters
from .config import ConfigError, RunConfig
from .evaluation import (
    EvalReport,
    evaluate_traces,
    load_queries,
    recall_at_k,
    sample_queries,
)
from .orchestrator import ReasoningPipeline, ReasoningTrace
from .retrieval import Bm25Index, build_index
from .tables import ingest_corpus, save_rejections, TableCorpus
from .llm import ProviderError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

_CONFIG_HELP = """\
configuration precedence (highest wins):
  flags            command-line options below
  config file      --config <path> (JSON object of option names)
  environment      OPENTAB_LLM_URL, OPENTAB_LLM_KEY, OPENTAB_LLM_MODEL, OPENTAB_SCORER_URL
  defaults         built-in defaults
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the CLI contract wants 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="opentab",
        description="Open-domain table reasoning pipeline",
        epilog=_CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="normalize a table dump into the corpus format")
    p_ingest.add_argument("--source", required=True)
    p_ingest.add_argument("--format", default="tables-jsonl", dest="fmt",
                          choices=("tables-jsonl", "open-wikitable", "feverous"))
    p_ingest.add_argument("--out", required=True, help="normalized corpus (tables-jsonl)")
    p_ingest.add_argument("--rejects", help="rejection report path (JSON lines)")
    p_ingest.add_argument("--queries-source", help="also convert this query dump")
    p_ingest.add_argument("--queries-out", help="output path for converted queries")
    p_ingest.set_defaults(func=cmd_ingest)

    p_index = sub.add_parser("index", help="build and persist the BM25 index")
    p_index.add_argument("--corpus", required=True)
    p_index.add_argument("--out", required=True)
    p_index.add_argument("--fields", default=None, choices=("title_only", "title_schema", "full"))
    p_index.add_argument("--k1", type=float, default=None)
    p_index.add_argument("--b", type=float, default=None)
    p_index.set_defaults(func=cmd_index)

    p_retrieve = sub.add_parser("retrieve", help="inspect top-k table ids for a query")
    p_retrieve.add_argument("--index", required=True)
    p_retrieve.add_argument("-q", "--query", required=True)
    p_retrieve.add_argument("--k", default="10")
    p_retrieve.set_defaults(func=cmd_retrieve)

    p_ask = sub.add_parser("ask", help="answer a single query")
    _add_run_options(p_ask)
    p_ask.add_argument("-q", "--query", required=True)
    p_ask.add_argument("--task", default="qa", choices=("qa", "fact_verification"))
    p_ask.add_argument("--gold-table", help="gold table id (closed strategy)")
    p_ask.add_argument("--query-id", default="q")
    p_ask.set_defaults(func=cmd_ask)

    p_eval = sub.add_parser("eval", help="batch evaluation over a query file")
    _add_run_options(p_eval)
    p_eval.add_argument("--queries", required=True)
    p_eval.add_argument("--metric", default="answer", choices=("answer", "recall"))
    p_eval.set_defaults(func=cmd_eval)

    return parser


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--corpus")
    p.add_argument("--index")
    p.add_argument("--strategy", choices=("closed", "sequential", "joint", "grsr"))
    p.add_argument("--k", help="candidate count; comma list for recall (e.g. 5,10,20,50)")
    p.add_argument("--k-rows", type=int, dest="k_rows")
    p.add_argument("--provider", choices=("live", "record", "replay-strict"))
    p.add_argument("--transcript")
    p.add_argument("--llm-url", dest="llm_url")
    p.add_argument("--llm-model", dest="llm_model")
    p.add_argument("--scorer", choices=("lexical", "remote"))
    p.add_argument("--scorer-url", dest="scorer_url")
    p.add_argument("--templates-dir", dest="templates_dir")
    p.add_argument("--trace-out", dest="trace_out")
    p.add_argument("--report-out", dest="report_out")
    p.add_argument("--sample", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--timeout", type=float, dest="timeout_s")
    p.add_argument("--max-result-rows", type=int, dest="max_result_rows")
    p.add_argument("--char-budget", type=int, dest="char_budget")
    p.add_argument("--fields", dest="index_fields", choices=("title_only", "title_schema", "full"))
    p.add_argument("--fallback-rows", action="store_const", const=True, dest="fallback_rows",
                   help="non-faithful mode: read from sampled rows when all SQL fails")


_RUN_FIELDS = (
    "corpus", "index", "strategy", "k_rows", "provider", "transcript", "llm_url",
    "llm_model", "scorer", "scorer_url", "templates_dir", "trace_out", "report_out",
    "sample", "seed", "jobs", "timeout_s", "max_result_rows", "char_budget",
    "index_fields", "fallback_rows",
)


def _parse_k_list(text: str) -> list[int]:
    try:
        ks = [int(part) for part in str(text).split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"bad --k value: {text!r}")
    if not ks or any(k < 1 for k in ks):
        raise UsageError(f"bad --k value: {text!r}")
    return ks


def _resolve_config(args, require_provider: bool = True) -> RunConfig:
    flags = {name: getattr(args, name, None) for name in _RUN_FIELDS}
    k_value = getattr(args, "k", None)
    if k_value is not None:
        flags["k"] = _parse_k_list(k_value)[0]
    try:
        return RunConfig.resolve(flags, getattr(args, "config", None), require_provider)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_corpus(path: str) -> TableCorpus:
    corpus, _ = ingest_corpus(path, "tables-jsonl")
    return corpus


def _index_path(out: str) -> Path:
    path = Path(out)
    if out.endswith(os.sep) or out.endswith("/") or path.is_dir():
        path.mkdir(parents=True, exist_ok=True)
        return path / "bm25.idx"
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _trace_lines(traces: list[ReasoningTrace]) -> str:
    ordered = sorted(traces, key=lambda t: t.query_id)
    return "".join(
        json.dumps(t.to_dict(), sort_keys=True, ensure_ascii=False) + "\n" for t in ordered
    )


# -- commands -----------------------------------------------------------------


def cmd_ingest(args) -> int:
    corpus, rejections = ingest_corpus(args.source, args.fmt)
    corpus.save_jsonl(args.out)
    rejects_path = args.rejects or str(Path(args.out).with_suffix(".rejects.jsonl"))
    save_rejections(rejects_path, rejections)
    if args.queries_source:
        if not args.queries_out:
            raise UsageError("--queries-source requires --queries-out")
        n = adapters.convert_queries(args.queries_source, args.fmt, args.queries_out)
        print(f"queries: {n} written to {args.queries_out}")
    print(f"tables: {len(corpus)} ingested, {len(rejections)} rejected -> {args.out}")
    return EXIT_OK


def cmd_index(args) -> int:
    corpus = _load_corpus(args.corpus)
    index = build_index(
        corpus,
        k1=args.k1 if args.k1 is not None else 1.5,
        b=args.b if args.b is not None else 0.75,
        fields=args.fields or "full",
    )
    path = _index_path(args.out)
    index.save(path)
    print(f"indexed {index.doc_count} tables -> {path}")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    index = Bm25Index.load(_index_path(args.index))
    k = _parse_k_list(args.k)[0]
    for result in index.retrieve(args.query, k):
        print(f"{result.rank}\t{result.table_id}\t{result.score:.6f}")
    return EXIT_OK


def _make_pipeline(config: RunConfig, need_provider: bool = True) -> ReasoningPipeline:
    if not config.corpus:
        raise UsageError("--corpus is required")
    corpus = _load_corpus(config.corpus)
    index = Bm25Index.load(_index_path(config.index)) if config.index else None
    provider = config.make_provider() if need_provider else None
    return ReasoningPipeline(
        corpus,
        index=index,
        provider=provider,
        scorer=config.make_scorer(),
        templates=config.make_templates(),
        settings=config.make_settings(),
    )


def cmd_ask(args) -> int:
    config = _resolve_config(args)
    pipeline = _make_pipeline(config)
    strategy = config.make_strategy()
    gold = (args.gold_table,) if args.gold_table else ()
    if strategy.tag == "closed" and not gold:
        raise UsageError("closed strategy requires --gold-table")
    trace = pipeline.answer(args.query_id, args.query, strategy, gold, args.task)
    trace.config = config.echo()
    if trace.answer is not None:
        if trace.answer.verdict is not None:
            print(trace.answer.verdict)
        else:
            print(" [SEP] ".join(trace.answer.items))
    else:
        print(f"no answer ({trace.failure})")
    if config.trace_out:
        _atomic_write(config.trace_out, _trace_lines([trace]))
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _resolve_config(args, require_provider=args.metric != "recall")
    records = load_queries(args.queries)
    if config.sample is not None:
        records = sample_queries(records, config.sample, config.seed)

    if args.metric == "recall":
        ks = _parse_k_list(args.k) if args.k else [5, 10, 20, 50]
        pipeline = _make_pipeline(config, need_provider=False)
        result_lists = [pipeline.retrieve(r.text, max(ks)) for r in records]
        metrics = {f"recall@{k}": recall_at_k(result_lists, records, k) for k in ks}
        report = EvalReport(metrics=metrics, per_query=[], counts={}, config=config.echo())
    else:
        pipeline = _make_pipeline(config)
        strategy = config.make_strategy()

        def _run(record):
            return pipeline.answer(
                record.id, record.text, strategy, record.gold_table_ids, record.task
            )

        if config.jobs > 1:
            with ThreadPoolExecutor(max_workers=config.jobs) as pool:
                traces = list(pool.map(_run, records))
        else:
            traces = [_run(r) for r in records]
        for t in traces:
            t.config = config.echo()
        report = evaluate_traces(traces, records)
        report.config = config.echo()
        if config.trace_out:
            _atomic_write(config.trace_out, _trace_lines(traces))

    for name in sorted(report.metrics):
        print(f"{name}\t{report.metrics[name]:.4f}")
    if report.counts:
        print(
            "answered={answered} abstained={abstained} provider_errors={provider_errors}".format(
                **report.counts
            )
        )
    if config.report_out:
        _atomic_write(
            config.report_out,
            json.dumps(report.to_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        )
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, ProviderError) as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
