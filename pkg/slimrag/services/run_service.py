import asyncio
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

from ..exceptions import GatewayError, SlimRagException
from ..models import (
    EndpointRole,
    HeuristicAnswer,
    PipelineConfig,
    PipelineTrace,
    Question,
    QuestionResult,
    RunSummary,
)
from ..prompts import TemplateId, render
from ..repositories.jsonl_store import JsonlWriter, load_dataset
from .cost_service import account_cost
from .gateway_service import ModelGateway
from .workflow_service import WorkflowService

logger = logging.getLogger(__name__)


def result_from_trace(trace: PipelineTrace, config: PipelineConfig) -> QuestionResult:
    return QuestionResult(
        id=trace.question_id,
        answer=trace.final_answer,
        plan_kind=trace.plan.kind,
        queries=trace.retrieval_queries,
        cost=account_cost(trace, config.endpoints),
    )


def rewrite_trace_record(trace: PipelineTrace) -> Optional[Dict[str, object]]:
    """{"question_id","question_queries","claims"} for traces that went through the rewriter"""
    if trace.rewrite_result is None:
        return None
    return {
        "question_id": trace.question_id,
        "question_queries": list(trace.rewrite_result.question_queries),
        "claims": [
            {"claim": d.claim_query.claim, "query": d.claim_query.query, "kept": d.kept}
            for d in trace.claim_decisions
        ],
    }


async def run_dataset(
    dataset_path: Union[str, Path],
    config: PipelineConfig,
    out_path: Union[str, Path],
    workflow: WorkflowService,
    rewrite_trace_path: Optional[Union[str, Path]] = None,
) -> RunSummary:
    """Answer every question of a dataset and write one result line per question in input order.

    Questions run concurrently up to ``config.concurrency``. A failed question is
    written as {"id", "error"} and the run continues.
    """
    questions = load_dataset(dataset_path)
    limit = asyncio.Semaphore(config.concurrency)

    async def answer(question: Question) -> PipelineTrace:
        async with limit:
            return await workflow.run_question(question)

    tasks = [asyncio.ensure_future(answer(q)) for q in questions]
    succeeded = 0
    trace_writer = JsonlWriter(rewrite_trace_path) if rewrite_trace_path else None
    try:
        with JsonlWriter(out_path) as writer:
            for question, task in zip(questions, tasks):
                try:
                    trace = await task
                    result = result_from_trace(trace, config)
                except SlimRagException as e:
                    logger.error(f"Question {question.id} failed: {e}")
                    writer.write({"id": question.id, "error": str(e)})
                    continue
                except Exception as e:
                    logger.exception(f"Question {question.id} failed unexpectedly")
                    writer.write({"id": question.id, "error": f"{type(e).__name__}: {e}"})
                    continue

                writer.write(result.model_dump(mode="json", exclude={"error"}))
                succeeded += 1
                if trace_writer is not None:
                    record = rewrite_trace_record(trace)
                    if record is not None:
                        trace_writer.write(record)
    finally:
        for task in tasks:
            task.cancel()
        if trace_writer is not None:
            trace_writer.close()

    summary = RunSummary(total=len(questions), succeeded=succeeded, failed=len(questions) - succeeded)
    log = logger.error if summary.run_failed else logger.info
    log(
        f"Run finished: {summary.succeeded}/{summary.total} succeeded "
        f"({summary.failure_rate:.1%} failed)"
    )
    return summary


async def generate_heuristic_answers(
    questions: List[Question],
    config: PipelineConfig,
    gateway: ModelGateway,
    out_path: Union[str, Path],
) -> int:
    """Run the proxy model alone over a dataset; lines feed label collection and annotation"""
    endpoint = config.endpoint(EndpointRole.PROXY)
    limit = asyncio.Semaphore(config.concurrency)

    async def answer(question: Question) -> HeuristicAnswer:
        async with limit:
            exchange = await gateway.chat(endpoint, render(TemplateId.VANILLA, {"question": question.text}))
        return HeuristicAnswer(
            question_id=question.id,
            text=exchange.response_text,
            completion_tokens=exchange.completion_tokens,
        )

    outcomes = await asyncio.gather(*(answer(q) for q in questions), return_exceptions=True)
    with JsonlWriter(out_path) as writer:
        for question, outcome in zip(questions, outcomes):
            if isinstance(outcome, GatewayError):
                logger.error(f"Proxy failed for {question.id}: {outcome}")
                continue
            if isinstance(outcome, BaseException):
                raise outcome
            writer.write(outcome.model_dump())
        return writer.count
