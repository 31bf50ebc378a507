"""
Heuristic-answer-driven query rewriting.

The rewriter answers in a flat token grammar::

    <Query> q_x1 <Claim> c_1 <Query> q_c1 <Claim> c_2 <Query> q_c2 ...

A ``<Query>`` that follows a ``<Claim>`` belongs to that claim. Only a ``<Query>``
with no ``<Claim>`` before it is a question-level rewrite; a second ``<Query>``
after a claim unit is dropped. The annotation grammar used to build
rewriter training data is parenthesized instead::

    <Claims> <Claim(c_1)> <Search(True)> <Query(q_1)> ... </Claims>
"""

import asyncio
import logging
import re
from typing import Awaitable, Callable, List, NamedTuple, Optional, Sequence

from pydantic import ValidationError

from ..exceptions import AnnotationParseError, InvalidInputError, RewriteParseError
from ..models import ClaimDecision, ClaimQuery, Component, ModelEndpoint, RewriteResult, Verdict
from ..prompts import TemplateId, render, render_text
from .gateway_service import ModelGateway
from .trace import ExchangeLog

logger = logging.getLogger(__name__)

CLAIM_TOKEN = "<Claim>"
QUERY_TOKEN = "<Query>"
_UNIT_SPLIT = re.compile(r"(<Claim>|<Query>)")
_ANNOTATION_TOKEN = re.compile(r"<(Claim|Search|Query)\(")

JudgeFn = Callable[[str, str], Awaitable[Verdict]]


class ParsedRewrite(NamedTuple):
    question_queries: List[str]
    claim_queries: List[ClaimQuery]
    warnings: List[str]


def parse_rewrite_output(raw: str) -> ParsedRewrite:
    """Split rewriter output into question-level queries and claim/query pairs, order kept"""
    parts = _UNIT_SPLIT.split(raw or "")
    question_queries: List[str] = []
    claim_queries: List[ClaimQuery] = []
    warnings: List[str] = []

    pending_claim: Optional[str] = None
    seen_claim = False
    for token, text in zip(parts[1::2], parts[2::2]):
        text = text.strip()
        if token == CLAIM_TOKEN:
            if pending_claim is not None:
                warnings.append(f"claim without query dropped: {pending_claim!r}")
            pending_claim = text
            seen_claim = True
            continue

        if pending_claim is None:
            if seen_claim:
                warnings.append(f"stray {QUERY_TOKEN} after a claim unit dropped: {text!r}")
            elif not text:
                warnings.append("empty question-level query dropped")
            else:
                question_queries.append(text)
            continue

        if pending_claim and text:
            claim_queries.append(ClaimQuery(claim=pending_claim, query=text))
        else:
            warnings.append(f"unit with empty claim or query dropped: ({pending_claim!r}, {text!r})")
        pending_claim = None

    if pending_claim is not None:
        warnings.append(f"claim without query dropped: {pending_claim!r}")

    if not question_queries and not claim_queries:
        raise RewriteParseError("Rewriter output contains no claim/query units", raw_output=raw)
    for warning in warnings:
        logger.warning(f"Rewrite parse: {warning}")
    return ParsedRewrite(question_queries, claim_queries, warnings)


def format_rewrite_output(question_queries: Sequence[str], claim_queries: Sequence[ClaimQuery]) -> str:
    """Serialize queries into the rewriter grammar, question-level queries first"""
    units = [f"{QUERY_TOKEN} {q}" for q in question_queries]
    units += [f"{CLAIM_TOKEN} {cq.claim} {QUERY_TOKEN} {cq.query}" for cq in claim_queries]
    return " ".join(units)


async def judge_claim_queries(pairs: Sequence[ClaimQuery], judge_fn: JudgeFn) -> List[ClaimDecision]:
    """Judge each pair with the query in the question slot and the claim in the answer slot"""
    outcomes = await asyncio.gather(
        *(judge_fn(pair.query, pair.claim) for pair in pairs), return_exceptions=True
    )
    decisions: List[ClaimDecision] = []
    for pair, outcome in zip(pairs, outcomes):
        if isinstance(outcome, BaseException):
            if not isinstance(outcome, Exception):
                raise outcome
            logger.warning(f"Judge failed for claim query {pair.query!r}, keeping it: {outcome}")
            decisions.append(ClaimDecision(claim_query=pair, kept=True, judge_failed=True))
        else:
            decisions.append(ClaimDecision(claim_query=pair, kept=not outcome.known))
    return decisions


async def filter_claim_queries(pairs: Sequence[ClaimQuery], judge_fn: JudgeFn) -> List[str]:
    """Queries whose claim the judge does not consider known, in input order"""
    decisions = await judge_claim_queries(pairs, judge_fn)
    return [d.claim_query.query for d in decisions if d.kept]


def build_annotation_request(question: str, heuristic_answer: str) -> str:
    if not question or not question.strip():
        raise InvalidInputError("annotation request needs a non-empty question")
    if not heuristic_answer or not heuristic_answer.strip():
        raise InvalidInputError("annotation request needs a non-empty heuristic answer")
    return render_text(
        TemplateId.ANNOTATION_GPT4, {"question": question, "heuristic_answer": heuristic_answer}
    )


def _balanced_content(raw: str, start: int) -> Optional[int]:
    """Index just past the parenthesis closing the one opened before ``start``."""
    depth = 1
    pos = start
    while pos < len(raw):
        ch = raw[pos]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return pos + 1
        pos += 1
    return None


def parse_annotation_output(raw: str) -> List[ClaimQuery]:
    """Extract (claim, search flag, query) triples from annotator output"""
    entries: List[dict] = []
    pos = 0
    while True:
        match = _ANNOTATION_TOKEN.search(raw, pos)
        if match is None:
            break
        end = _balanced_content(raw, match.end())
        if end is None:
            logger.warning(f"Unterminated <{match.group(1)}( token at offset {match.start()}")
            break
        content = raw[match.end():end - 1].strip()
        kind = match.group(1)
        if kind == "Claim":
            entries.append({"claim": content, "search": None, "query": ""})
        elif entries:
            if kind == "Search":
                flag = content.lower()
                entries[-1]["search"] = True if flag == "true" else False if flag == "false" else None
            else:
                entries[-1]["query"] = content
        pos = end

    results: List[ClaimQuery] = []
    for entry in entries:
        needs_search = entry["search"] if entry["search"] is not None else bool(entry["query"])
        try:
            results.append(
                ClaimQuery(claim=entry["claim"], query=entry["query"], needs_search=needs_search)
            )
        except ValidationError as e:
            logger.warning(f"Annotation entry dropped {entry!r}: {e.errors()[0]['msg']}")

    if not results:
        raise AnnotationParseError("Annotation output contains no claim triples")
    return results


class RewriteService:
    """Runs the rewriter model and parses its claim/query output"""

    def __init__(self, gateway: ModelGateway, endpoint: ModelEndpoint):
        self.gateway = gateway
        self.endpoint = endpoint

    async def rewrite(
        self,
        question: str,
        heuristic_answer: str,
        log: Optional[ExchangeLog] = None,
    ) -> RewriteResult:
        if not question or not question.strip():
            raise InvalidInputError("rewrite() needs a non-empty question")
        if not heuristic_answer or not heuristic_answer.strip():
            raise InvalidInputError("rewrite() needs a non-empty heuristic answer")

        messages = render(
            TemplateId.REWRITE, {"question": question, "heuristic_answer": heuristic_answer}
        )
        exchange = await self.gateway.chat(self.endpoint, messages, temperature=0.0)
        if log is not None:
            log.record(Component.REWRITER, self.endpoint.role, exchange)

        parsed = parse_rewrite_output(exchange.response_text)
        question_queries = parsed.question_queries or [question]
        return RewriteResult(
            question_queries=question_queries,
            claim_queries=parsed.claim_queries,
            raw_output=exchange.response_text,
        )
