import logging
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Union

from rouge_score import rouge_scorer, tokenizers

from ..exceptions import EvaluationError, InvalidInputError
from ..models import EvalReport, GapRow, PromptStyle, Question, QuestionResult, QuestionScore, RougeScore
from ..repositories.jsonl_store import load_dataset, load_results
from ..text import matching_ratio, normalize_text, tokenize
from .cost_service import cost_table

logger = logging.getLogger(__name__)


class NormalizedTokenizer(tokenizers.Tokenizer):
    """ROUGE tokenization on normalized text, no stemming"""

    def tokenize(self, text):
        return tokenize(text)


@lru_cache(maxsize=None)
def _scorer(rouge_type: str) -> rouge_scorer.RougeScorer:
    return rouge_scorer.RougeScorer([rouge_type], tokenizer=NormalizedTokenizer())


def _score(rouge_type: str, pred: str, ref: str) -> RougeScore:
    result = _scorer(rouge_type).score(ref or "", pred or "")[rouge_type]
    return RougeScore(precision=result.precision, recall=result.recall, f1=result.fmeasure)


def em_coverage(pred: str, golds: Sequence[str]) -> float:
    """Fraction of distinct gold short answers contained in the prediction"""
    return matching_ratio(pred, list(golds))


def strict_em(pred: str, golds: Sequence[str]) -> float:
    if not golds:
        raise InvalidInputError("strict_em needs at least one gold answer")
    pred_norm = normalize_text(pred)
    return 1.0 if any(pred_norm == normalize_text(g) for g in golds) else 0.0


def hit_at_1(pred: str, golds: Sequence[str]) -> bool:
    return em_coverage(pred, golds) > 0


def rouge_n(pred: str, ref: str, n: int) -> RougeScore:
    if not 1 <= n <= 9:
        raise InvalidInputError(f"rouge_n supports n in 1..9, got {n}")
    return _score(f"rouge{n}", pred, ref)


def rouge_l(pred: str, ref: str) -> RougeScore:
    return _score("rougeL", pred, ref)


def score_question(result: QuestionResult, question: Question, mode: PromptStyle) -> QuestionScore:
    answer = result.answer or ""
    if mode == PromptStyle.SHORT_FORM:
        if not question.gold_short_answers:
            raise EvaluationError(f"Question {question.id} has no short answers")
        return QuestionScore(
            id=question.id,
            em=em_coverage(answer, question.gold_short_answers),
            strict_em=strict_em(answer, question.gold_short_answers),
            hit_at_1=1.0 if hit_at_1(answer, question.gold_short_answers) else 0.0,
        )
    if not question.gold_long_answer:
        raise EvaluationError(f"Question {question.id} has no long answer")
    return QuestionScore(
        id=question.id,
        rouge1=rouge_n(answer, question.gold_long_answer, 1).f1,
        rouge2=rouge_n(answer, question.gold_long_answer, 2).f1,
        rougeL=rouge_l(answer, question.gold_long_answer).f1,
    )


_AGGREGATES = {
    PromptStyle.SHORT_FORM: ("em", "strict_em", "hit_at_1"),
    PromptStyle.LONG_FORM: ("rouge1", "rouge2", "rougeL"),
}


def evaluate_results(
    results: Sequence[QuestionResult],
    questions: Sequence[Question],
    mode: PromptStyle,
) -> EvalReport:
    mode = PromptStyle(mode)
    if not results:
        raise EvaluationError("No results to evaluate")
    by_id = {q.id: q for q in questions}
    unmatched = [r.id for r in results if r.id not in by_id]
    if unmatched:
        raise EvaluationError(f"Result ids missing from dataset: {', '.join(unmatched)}")

    scored = [r for r in results if r.succeeded]
    if not scored:
        raise EvaluationError("Every question in the run failed; nothing to score")
    skipped = len(results) - len(scored)
    if skipped:
        logger.warning(f"Skipping {skipped} failed questions")

    per_question = [score_question(r, by_id[r.id], mode) for r in scored]
    aggregates = {
        name: sum(getattr(s, name) for s in per_question) / len(per_question)
        for name in _AGGREGATES[mode]
    }
    return EvalReport(
        mode=mode,
        sample_count=len(per_question),
        aggregates=aggregates,
        per_question=per_question,
        cost=cost_table(results),
    )


def evaluate_run(
    results_path: Union[str, Path],
    dataset_path: Union[str, Path],
    mode: PromptStyle,
) -> EvalReport:
    """Score a results file against its dataset"""
    return evaluate_results(load_results(results_path), load_dataset(dataset_path), mode)


def _check_same_ids(scores_a: Mapping[str, float], scores_b: Mapping[str, float]) -> None:
    if set(scores_a) != set(scores_b):
        only_a = sorted(set(scores_a) - set(scores_b))
        only_b = sorted(set(scores_b) - set(scores_a))
        raise InvalidInputError(f"Score id mismatch: only in A {only_a}, only in B {only_b}")
    if not scores_a:
        raise InvalidInputError("Score lists are empty")


def knowledge_gap_report(
    scores_a: Mapping[str, float],
    scores_b: Mapping[str, float],
    thresholds: Sequence[float],
) -> List[GapRow]:
    """Per threshold: share of A and of B above it, and how much of B's set A also covers.

    B is the smaller model. Overlap is None when no B sample clears the threshold.
    """
    _check_same_ids(scores_a, scores_b)
    n = len(scores_a)
    rows: List[GapRow] = []
    for t in thresholds:
        above_a = {qid for qid, s in scores_a.items() if s > t}
        above_b = {qid for qid, s in scores_b.items() if s > t}
        rows.append(
            GapRow(
                threshold=t,
                share_a=len(above_a) / n,
                share_b=len(above_b) / n,
                overlap=len(above_a & above_b) / len(above_b) if above_b else None,
            )
        )
    return rows


def improvement_share(scores_with: Mapping[str, float], scores_without: Mapping[str, float]) -> float:
    """Fraction of questions whose score is strictly higher with retrieval"""
    _check_same_ids(scores_with, scores_without)
    improved = sum(1 for qid, s in scores_with.items() if s > scores_without[qid])
    return improved / len(scores_with)


def score_records(report: EvalReport) -> List[Dict[str, object]]:
    """Per-question {"id","em"} lines for the gap analysis"""
    return [{"id": s.id, "em": s.em} for s in report.per_question if s.em is not None]
