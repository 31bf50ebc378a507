#!/usr/bin/env python3
"""
slim-rag command line.

Subcommands cover the whole workflow: build a BM25 index, run the routing
pipeline over a dataset, collect judgment labels, prepare and parse rewrite
annotations, score a run, compare two models' knowledge, print cost tables
and serve the deterministic mock model server.
"""

import argparse
import asyncio
import json
import logging
import sys
from typing import List, Optional, Sequence

from .api import mock_llm_serve
from .config import load_pipeline_config, settings
from .container import Container, build_gateway
from .exceptions import AnnotationParseError, ConfigurationError, SlimRagException
from .models import BM25Params, EndpointRole, LabelConfig, PipelineMode, PromptStyle
from .repositories.index_store import FileIndexRepository, build_index
from .repositories.jsonl_store import (
    iter_corpus,
    iter_jsonl,
    load_dataset,
    load_heuristic_answers,
    load_results,
    load_scores,
    write_jsonl,
)
from .services.cost_service import cost_table, table_row
from .services.evaluation_service import (
    evaluate_run,
    improvement_share,
    knowledge_gap_report,
    score_records,
)
from .services.judgment_service import collect_labels
from .services.rewrite_service import build_annotation_request, parse_annotation_output
from .services.run_service import generate_heuristic_answers, run_dataset

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _bm25_params(args: argparse.Namespace) -> Optional[BM25Params]:
    if args.k1 is None and args.b is None:
        return None
    return BM25Params(
        k1=args.k1 if args.k1 is not None else settings.bm25_k1,
        b=args.b if args.b is not None else settings.bm25_b,
    )


def _thresholds(raw: str) -> List[float]:
    try:
        return [float(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"thresholds must be comma-separated numbers: {raw!r}")


def _print_json(data) -> None:
    print(json.dumps(data, ensure_ascii=False))


def cmd_index(args: argparse.Namespace) -> int:
    params = _bm25_params(args) or BM25Params(k1=settings.bm25_k1, b=settings.bm25_b)
    index = build_index(iter_corpus(args.corpus), params)
    FileIndexRepository().save(index, args.out)
    _print_json({"documents": index.doc_count, "terms": index.vocabulary_size, "out": args.out})
    return EXIT_OK


async def _run(args: argparse.Namespace) -> int:
    config = load_pipeline_config(args.config, mode=args.mode)
    container = Container(config, index_path=args.corpus_index, bm25_params=_bm25_params(args))
    try:
        summary = await run_dataset(
            args.dataset,
            config,
            args.out,
            container.workflow_service,
            rewrite_trace_path=args.rewrite_trace,
        )
    finally:
        await container.aclose()
    _print_json(summary.model_dump())
    return EXIT_FAILED if summary.run_failed else EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    return asyncio.run(_run(args))


def _paired_samples(dataset_path: str, answers_path: str):
    questions = load_dataset(dataset_path)
    answers = load_heuristic_answers(answers_path)
    missing = [q.id for q in questions if q.id not in answers]
    if missing:
        logger.warning(f"{len(missing)} questions have no heuristic answer and are skipped")
    return [(q, answers[q.id]) for q in questions if q.id in answers]


def cmd_labels_collect(args: argparse.Namespace) -> int:
    samples = _paired_samples(args.dataset, args.answers)
    collection = collect_labels(samples, LabelConfig(threshold=args.theta, seed=args.seed))
    write_jsonl(args.out, (s.to_record() for s in collection.samples))
    _print_json(
        {
            "known": collection.known_count,
            "unknown": collection.unknown_count,
            "dropped": collection.dropped_count,
            "rejected": [r.question_id for r in collection.rejected],
        }
    )
    return EXIT_OK


async def _labels_proxy(args: argparse.Namespace) -> int:
    config = load_pipeline_config(args.config)
    if EndpointRole.PROXY not in config.endpoints:
        raise ConfigurationError(f"{args.config} has no proxy endpoint")
    questions = load_dataset(args.dataset)
    async with build_gateway() as gateway:
        written = await generate_heuristic_answers(questions, config, gateway, args.out)
    _print_json({"questions": len(questions), "answers": written})
    return EXIT_OK if written == len(questions) else EXIT_FAILED


def cmd_labels_proxy(args: argparse.Namespace) -> int:
    return asyncio.run(_labels_proxy(args))


def cmd_annotate_prep(args: argparse.Namespace) -> int:
    samples = _paired_samples(args.dataset, args.answers)
    count = write_jsonl(
        args.out,
        (
            {"id": q.id, "prompt": build_annotation_request(q.text, a.text)}
            for q, a in samples
            if a.text.strip()
        ),
    )
    _print_json({"requests": count})
    return EXIT_OK


def cmd_annotate_parse(args: argparse.Namespace) -> int:
    records = []
    failed = 0
    for record in iter_jsonl(args.input):
        try:
            claims = parse_annotation_output(str(record.get("output", "")))
        except AnnotationParseError as e:
            logger.warning(f"Annotation {record.get('id')!r} skipped: {e}")
            failed += 1
            continue
        records.append(
            {
                "id": record.get("id"),
                "claims": [
                    {"claim": c.claim, "needs_search": c.needs_search, "query": c.query} for c in claims
                ],
            }
        )
    write_jsonl(args.out, records)
    _print_json({"parsed": len(records), "failed": failed})
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    report = evaluate_run(args.results, args.dataset, PromptStyle(args.mode))
    if args.report:
        with open(args.report, "w", encoding="utf-8") as handle:
            handle.write(report.model_dump_json(indent=2))
    if args.scores:
        write_jsonl(args.scores, score_records(report))
    _print_json({"mode": report.mode.value, "samples": report.sample_count, **report.aggregates})
    return EXIT_OK


def cmd_gap(args: argparse.Namespace) -> int:
    scores_a = load_scores(args.a)
    scores_b = load_scores(args.b)
    if args.improvement:
        _print_json({"improvement_share": improvement_share(scores_a, scores_b)})
        return EXIT_OK
    for row in knowledge_gap_report(scores_a, scores_b, args.thresholds):
        _print_json(row.model_dump())
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    for path in args.results:
        _print_json(table_row(cost_table(load_results(path)), name=path))
    return EXIT_OK


def cmd_mock_llm(args: argparse.Namespace) -> int:
    mock_llm_serve(args.script, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slim-rag",
        description="Retrieval routing with a small proxy model",
    )
    parser.add_argument("--log-level", default=None, help="Logging level (default: SLIMRAG_LOG_LEVEL or INFO)")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")

    index = commands.add_parser("index", help="Build a BM25 index from a corpus JSONL")
    index.add_argument("--corpus", required=True, help="Corpus JSONL")
    index.add_argument("--out", required=True, help="Index file to write")
    index.add_argument("--k1", type=float, default=None, help="BM25 k1")
    index.add_argument("--b", type=float, default=None, help="BM25 b")
    index.set_defaults(handler=cmd_index)

    run = commands.add_parser("run", help="Answer a dataset with the routing pipeline")
    run.add_argument("--dataset", required=True, help="Dataset JSONL")
    run.add_argument("--corpus-index", default=None, help="Index built by `index`")
    run.add_argument("--config", required=True, help="Pipeline config JSON")
    run.add_argument("--mode", choices=[m.value for m in PipelineMode], default=None,
                     help="Override the config's mode")
    run.add_argument("--out", required=True, help="Results JSONL")
    run.add_argument("--rewrite-trace", default=None, help="Optional rewrite trace JSONL")
    run.add_argument("--k1", type=float, default=None, help="BM25 k1 override")
    run.add_argument("--b", type=float, default=None, help="BM25 b override")
    run.set_defaults(handler=cmd_run)

    labels = commands.add_parser("labels", help="Judgment label collection")
    labels_commands = labels.add_subparsers(dest="labels_command", metavar="STEP")
    collect = labels_commands.add_parser("collect", help="Label heuristic answers by matching ratio")
    collect.add_argument("--dataset", required=True)
    collect.add_argument("--answers", required=True, help="Heuristic answers JSONL")
    collect.add_argument("--theta", type=float, default=0.5, help="Matching-ratio threshold")
    collect.add_argument("--seed", type=int, default=0, help="Downsampling seed")
    collect.add_argument("--out", required=True)
    collect.set_defaults(handler=cmd_labels_collect)
    proxy = labels_commands.add_parser("proxy", help="Generate heuristic answers with the proxy model")
    proxy.add_argument("--dataset", required=True)
    proxy.add_argument("--config", required=True)
    proxy.add_argument("--out", required=True)
    proxy.set_defaults(handler=cmd_labels_proxy)

    annotate = commands.add_parser("annotate", help="Rewrite annotation requests and replies")
    annotate_commands = annotate.add_subparsers(dest="annotate_command", metavar="STEP")
    prep = annotate_commands.add_parser("prep", help="Build annotation requests")
    prep.add_argument("--dataset", required=True)
    prep.add_argument("--answers", required=True)
    prep.add_argument("--out", required=True)
    prep.set_defaults(handler=cmd_annotate_prep)
    parse = annotate_commands.add_parser("parse", help="Parse annotator replies into claims")
    parse.add_argument("--input", required=True, help='JSONL of {"id","output"}')
    parse.add_argument("--out", required=True)
    parse.set_defaults(handler=cmd_annotate_parse)

    evaluate = commands.add_parser("eval", help="Score a results file")
    evaluate.add_argument("--results", required=True)
    evaluate.add_argument("--dataset", required=True)
    evaluate.add_argument("--mode", choices=[s.value for s in PromptStyle], default=PromptStyle.SHORT_FORM.value)
    evaluate.add_argument("--report", default=None, help="Report JSON to write")
    evaluate.add_argument("--scores", default=None, help='Per-question {"id","em"} JSONL to write')
    evaluate.set_defaults(handler=cmd_eval)

    gap = commands.add_parser("gap", help="Knowledge overlap between two score files")
    gap.add_argument("--a", required=True, help="Scores of model A")
    gap.add_argument("--b", required=True, help="Scores of model B")
    gap.add_argument("--thresholds", type=_thresholds, default=[0.1, 0.3, 0.5, 0.7])
    gap.add_argument("--improvement", action="store_true",
                     help="Print the share of questions where A beats B instead")
    gap.set_defaults(handler=cmd_gap)

    report = commands.add_parser("report", help="Mean token cost table per results file")
    report.add_argument("--results", required=True, nargs="+")
    report.set_defaults(handler=cmd_report)

    mock = commands.add_parser("mock-llm", help="Serve the deterministic mock model server")
    mock.add_argument("--script", required=True, help="MockScript JSON")
    mock.add_argument("--host", default=None)
    mock.add_argument("--port", type=int, default=None)
    mock.set_defaults(handler=cmd_mock_llm)

    return parser


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv, run the subcommand and return its exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    handler = getattr(args, "handler", None)
    if handler is None:
        parser.print_usage(sys.stderr)
        print("slim-rag: error: a subcommand is required", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return handler(args)
    except SlimRagException as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"slim-rag: {e}", file=sys.stderr)
        return EXIT_FAILED


def run() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    run()
