import logging
import random
import re
from typing import List, Optional, Sequence, Tuple

from ..exceptions import InvalidGoldError, InvalidInputError
from ..models import (
    Component,
    HeuristicAnswer,
    KnownLabel,
    LabelCollection,
    LabelConfig,
    LabeledSample,
    LabelRejection,
    ModelEndpoint,
    Question,
    Verdict,
)
from ..prompts import TemplateId, render
from ..text import matching_ratio
from .gateway_service import ModelGateway
from .trace import ExchangeLog

logger = logging.getLogger(__name__)

_VERDICT_PATTERN = re.compile(r"known\s*\(\s*(true|false)\s*\)", re.IGNORECASE)


def parse_verdict(raw: str) -> Verdict:
    """First "Known (True)" / "Known (False)" in the output wins; anything else means retrieve."""
    match = _VERDICT_PATTERN.search(raw or "")
    if match is None:
        return Verdict(known=False, raw_output=raw or "", fallback_applied=True)
    return Verdict(known=match.group(1).lower() == "true", raw_output=raw)


def label_from_ratio(ratio: float, threshold: float) -> KnownLabel:
    if not 0.0 <= ratio <= 1.0:
        raise InvalidInputError(f"ratio must be in [0, 1], got {ratio}")
    if not 0.0 <= threshold <= 1.0:
        raise InvalidInputError(f"threshold must be in [0, 1], got {threshold}")
    return KnownLabel.KNOWN_TRUE if ratio > threshold else KnownLabel.KNOWN_FALSE


def collect_labels(
    samples: Sequence[Tuple[Question, HeuristicAnswer]],
    config: Optional[LabelConfig] = None,
) -> LabelCollection:
    """Label each (question, heuristic answer) by matching ratio, then balance the classes."""
    config = config or LabelConfig()
    labeled: List[LabeledSample] = []
    rejected: List[LabelRejection] = []

    for question, answer in samples:
        if not question.gold_short_answers:
            rejected.append(LabelRejection(question_id=question.id, reason="no short answers"))
            continue
        try:
            ratio = matching_ratio(answer.text, question.gold_short_answers)
        except InvalidGoldError as e:
            rejected.append(LabelRejection(question_id=question.id, reason=str(e)))
            continue
        labeled.append(
            LabeledSample(
                question=question,
                heuristic_answer=answer,
                ratio=ratio,
                label=label_from_ratio(ratio, config.threshold),
            )
        )

    for rejection in rejected:
        logger.warning(f"Rejected sample {rejection.question_id}: {rejection.reason}")

    if config.balance:
        labeled = _downsample_majority(labeled, config.seed)

    collection = LabelCollection(samples=labeled, rejected=rejected)
    logger.info(
        f"Labels: known={collection.known_count} unknown={collection.unknown_count} "
        f"dropped={collection.dropped_count} rejected={len(rejected)}"
    )
    return collection


def _downsample_majority(labeled: List[LabeledSample], seed: int) -> List[LabeledSample]:
    known = [i for i, s in enumerate(labeled) if s.label == KnownLabel.KNOWN_TRUE]
    unknown = [i for i, s in enumerate(labeled) if s.label == KnownLabel.KNOWN_FALSE]
    majority, minority = (known, unknown) if len(known) > len(unknown) else (unknown, known)
    excess = len(majority) - len(minority)
    if excess <= 0:
        return labeled
    dropped = set(random.Random(seed).sample(majority, excess))
    return [s.model_copy(update={"kept": False}) if i in dropped else s for i, s in enumerate(labeled)]


class JudgmentService:
    """Retrieval-necessity judgment backed by the judge model"""

    def __init__(self, gateway: ModelGateway, endpoint: ModelEndpoint):
        self.gateway = gateway
        self.endpoint = endpoint

    async def judge(
        self,
        question: str,
        heuristic_answer: str,
        log: Optional[ExchangeLog] = None,
    ) -> Verdict:
        if not question or not question.strip():
            raise InvalidInputError("judge() needs a non-empty question")
        if not heuristic_answer or not heuristic_answer.strip():
            raise InvalidInputError("judge() needs a non-empty heuristic answer")

        messages = render(
            TemplateId.JUDGMENT, {"question": question, "heuristic_answer": heuristic_answer}
        )
        exchange = await self.gateway.chat(self.endpoint, messages, temperature=0.0)
        if log is not None:
            log.record(Component.JUDGE, self.endpoint.role, exchange)

        verdict = parse_verdict(exchange.response_text)
        if verdict.fallback_applied:
            logger.warning(f"Unparseable judge output, retrieving: {exchange.response_text[:200]!r}")
        return verdict
