import random
from collections import Counter

import pytest

from slimrag.exceptions import EvaluationError, InvalidGoldError, InvalidInputError
from slimrag.models import PlanKind, PromptStyle, Question, QuestionResult
from slimrag.services.evaluation_service import (
    em_coverage,
    evaluate_results,
    hit_at_1,
    improvement_share,
    knowledge_gap_report,
    rouge_l,
    rouge_n,
    strict_em,
)
from slimrag.text import tokenize

VOCAB = ["the", "tower", "paris", "iron", "built", "in", "1889", "by", "eiffel", "a"]


def phrase(rng, lo, hi):
    return " ".join(rng.choice(VOCAB) for _ in range(rng.randint(lo, hi)))


def f1(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def ngram_oracle(pred, ref, n):
    def grams(tokens):
        return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))

    p_grams, r_grams = grams(tokenize(pred)), grams(tokenize(ref))
    overlap = sum((p_grams & r_grams).values())
    precision = overlap / max(sum(p_grams.values()), 1)
    recall = overlap / max(sum(r_grams.values()), 1)
    return f1(precision, recall)


def lcs_oracle(pred, ref):
    a, b = tokenize(pred), tokenize(ref)
    if not a or not b:
        return 0.0
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            table[i + 1][j + 1] = table[i][j] + 1 if x == y else max(table[i][j + 1], table[i + 1][j])
    lcs = table[-1][-1]
    return f1(lcs / len(a), lcs / len(b))


class TestShortForm:
    def test_em_coverage(self):
        assert em_coverage("A spider has eight legs.", ["eight", "8"]) == 0.5
        assert em_coverage("Paris, France", ["paris"]) == 1.0
        assert em_coverage("Parisian nights", ["Paris"]) == 0.0

    def test_duplicate_golds_counted_once(self):
        assert em_coverage("Mount Fuji", ["Fuji", "fuji", "Mount Kita"]) == 0.5

    def test_strict_em(self):
        assert strict_em("  The Nile. ", ["the nile"]) == 1.0
        assert strict_em("The Nile flows through Cairo.", ["Nile"]) == 0.0

    def test_hit_at_1(self):
        assert hit_at_1("eight legs", ["eight", "8"])
        assert not hit_at_1("six legs", ["eight", "8"])

    def test_hit_at_1_iff_any_coverage(self):
        rng = random.Random(19)
        for _ in range(300):
            pred = phrase(rng, 0, 10)
            golds = [phrase(rng, 1, 2) for _ in range(rng.randint(1, 4))]
            assert hit_at_1(pred, golds) == (em_coverage(pred, golds) > 0)

    def test_invalid_gold(self):
        with pytest.raises(InvalidGoldError):
            em_coverage("anything", ["!!!"])


class TestRouge:
    def test_lcs_example(self):
        score = rouge_l("a b c d", "a c d e f")
        assert score.precision == pytest.approx(3 / 4)
        assert score.recall == pytest.approx(3 / 5)
        assert score.f1 == pytest.approx(f1(3 / 4, 3 / 5))

    def test_identical_texts(self):
        for score in (rouge_n("Eiffel built it", "eiffel built it!", 2), rouge_l("x y", "x y")):
            assert score.f1 == pytest.approx(1.0)

    def test_empty_prediction(self):
        assert rouge_l("", "some reference").f1 == 0.0
        assert rouge_n("", "some reference", 1).f1 == 0.0

    def test_n_out_of_range(self):
        with pytest.raises(InvalidInputError):
            rouge_n("a", "a", 0)

    def test_swap_exchanges_precision_and_recall(self):
        rng = random.Random(23)
        for _ in range(200):
            a, b = phrase(rng, 0, 12), phrase(rng, 0, 12)
            for forward, backward in (
                (rouge_n(a, b, 1), rouge_n(b, a, 1)),
                (rouge_n(a, b, 2), rouge_n(b, a, 2)),
                (rouge_l(a, b), rouge_l(b, a)),
            ):
                assert forward.precision == pytest.approx(backward.recall, abs=1e-12)
                assert forward.recall == pytest.approx(backward.precision, abs=1e-12)
                assert forward.f1 == pytest.approx(backward.f1, abs=1e-12)

    def test_matches_brute_force(self):
        rng = random.Random(11)
        for _ in range(200):
            pred = " ".join(rng.choice(VOCAB) for _ in range(rng.randint(0, 12)))
            ref = " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, 12)))
            assert rouge_n(pred, ref, 1).f1 == pytest.approx(ngram_oracle(pred, ref, 1), abs=1e-9)
            assert rouge_n(pred, ref, 2).f1 == pytest.approx(ngram_oracle(pred, ref, 2), abs=1e-9)
            assert rouge_l(pred, ref).f1 == pytest.approx(lcs_oracle(pred, ref), abs=1e-9)


class TestKnowledgeGap:
    def test_overlap_example(self):
        scores_a = {f"q{i}": 1.0 if i < 8 else 0.0 for i in range(10)}
        scores_b = {f"q{i}": 1.0 if 3 <= i < 8 or i == 9 else 0.0 for i in range(10)}
        (row,) = knowledge_gap_report(scores_a, scores_b, [0.5])
        assert row.share_a == pytest.approx(0.8)
        assert row.share_b == pytest.approx(0.6)
        assert row.overlap == pytest.approx(5 / 6)

    def test_half_of_b_uncovered(self):
        scores_a = {"a": 1.0, "b": 1.0, "c": 1.0, "d": 1.0, "e": 0.0}
        scores_b = {"a": 1.0, "b": 1.0, "c": 1.0, "d": 1.0, "e": 1.0}
        (row,) = knowledge_gap_report(scores_a, scores_b, [0.5])
        assert row.overlap == pytest.approx(0.8)

    def test_identical_scores_fully_overlap(self):
        scores = {"a": 0.9, "b": 0.2, "c": 0.6}
        rows = knowledge_gap_report(scores, dict(scores), [0.1, 0.5])
        assert [r.overlap for r in rows] == [1.0, 1.0]

    def test_threshold_is_strict(self):
        (row,) = knowledge_gap_report({"a": 0.5}, {"a": 0.5}, [0.5])
        assert row.share_a == 0 and row.share_b == 0
        assert row.overlap is None

    def test_id_mismatch(self):
        with pytest.raises(InvalidInputError):
            knowledge_gap_report({"a": 1.0}, {"b": 1.0}, [0.5])

    def test_improvement_share(self):
        with_refs = {"a": 1.0, "b": 0.5, "c": 0.0, "d": 1.0}
        without = {"a": 0.0, "b": 0.5, "c": 0.0, "d": 0.5}
        assert improvement_share(with_refs, without) == 0.5


def answered(qid, answer):
    return QuestionResult(id=qid, answer=answer, plan_kind=PlanKind.DIRECT)


class TestEvaluateResults:
    questions = [
        Question(id="a", text="Capital of France?", gold_short_answers=["Paris"], gold_long_answer="Paris is the capital."),
        Question(id="b", text="Spider legs?", gold_short_answers=["eight", "8"], gold_long_answer="Spiders have eight legs."),
    ]

    def test_short_form_aggregates(self):
        report = evaluate_results(
            [answered("a", "Paris"), answered("b", "eight legs")], self.questions, PromptStyle.SHORT_FORM
        )
        assert report.sample_count == 2
        assert report.aggregates["em"] == pytest.approx(0.75)
        assert report.aggregates["strict_em"] == pytest.approx(0.5)
        assert report.aggregates["hit_at_1"] == pytest.approx(1.0)

    def test_long_form_aggregates(self):
        report = evaluate_results(
            [answered("a", "Paris is the capital."), answered("b", "nothing")], self.questions, "long_form"
        )
        assert set(report.aggregates) == {"rouge1", "rouge2", "rougeL"}
        assert report.per_question[0].rougeL == pytest.approx(1.0)
        assert report.per_question[1].rouge1 == 0.0

    def test_failed_questions_skipped(self):
        results = [answered("a", "Paris"), QuestionResult(id="b", error="reader failed")]
        report = evaluate_results(results, self.questions, PromptStyle.SHORT_FORM)
        assert report.sample_count == 1
        assert report.aggregates["em"] == 1.0

    def test_unknown_id_rejected(self):
        with pytest.raises(EvaluationError):
            evaluate_results([answered("zzz", "x")], self.questions, PromptStyle.SHORT_FORM)

    def test_missing_gold_rejected(self):
        bare = [Question(id="a", text="Capital of France?")]
        with pytest.raises(EvaluationError):
            evaluate_results([answered("a", "Paris")], bare, PromptStyle.SHORT_FORM)

    def test_empty_results_rejected(self):
        with pytest.raises(EvaluationError):
            evaluate_results([], self.questions, PromptStyle.SHORT_FORM)

    @pytest.mark.parametrize("mode", [PromptStyle.SHORT_FORM, PromptStyle.LONG_FORM])
    def test_aggregates_ignore_order(self, mode):
        rng = random.Random(29)
        questions = [
            Question(
                id=f"q{i}",
                text=f"question {i}?",
                gold_short_answers=[phrase(rng, 1, 2) for _ in range(rng.randint(1, 3))],
                gold_long_answer=phrase(rng, 1, 12),
            )
            for i in range(40)
        ]
        results = [answered(q.id, phrase(rng, 0, 12)) for q in questions]
        baseline = evaluate_results(results, questions, mode)
        for _ in range(5):
            shuffled = results[:]
            rng.shuffle(shuffled)
            report = evaluate_results(shuffled, list(reversed(questions)), mode)
            assert report.sample_count == baseline.sample_count
            assert report.aggregates == pytest.approx(baseline.aggregates, abs=1e-12)
