import asyncio
import random

import pytest

from conftest import endpoint, mock_gateway
from slimrag.exceptions import AnnotationParseError, InvalidInputError, RewriteParseError
from slimrag.models import ClaimQuery, Component, EndpointRole, MockRule, MockScript, Verdict
from slimrag.services.rewrite_service import (
    RewriteService,
    build_annotation_request,
    filter_claim_queries,
    format_rewrite_output,
    judge_claim_queries,
    parse_annotation_output,
    parse_rewrite_output,
)
from slimrag.services.trace import ExchangeLog

WORDS = ["tower", "paris", "built", "1889", "iron", "who", "designed", "engineer", "(year)", "it's", "Fuji"]


class TestParseRewriteOutput:
    def test_single_unit(self):
        parsed = parse_rewrite_output("<Claim> A <Query> B")
        assert parsed.claim_queries == [ClaimQuery(claim="A", query="B")]
        assert parsed.question_queries == []

    def test_order_preserved(self):
        parsed = parse_rewrite_output("<Claim> A <Query> B <Claim> C <Query> D")
        assert [(c.claim, c.query) for c in parsed.claim_queries] == [("A", "B"), ("C", "D")]

    def test_claim_without_query_dropped(self):
        parsed = parse_rewrite_output("<Claim> A <Claim> C <Query> D")
        assert [(c.claim, c.query) for c in parsed.claim_queries] == [("C", "D")]
        assert len(parsed.warnings) == 1

    def test_leading_queries_are_question_level(self):
        parsed = parse_rewrite_output("<Query> x1 <Query> x2 <Claim> c <Query> q")
        assert parsed.question_queries == ["x1", "x2"]
        assert [(c.claim, c.query) for c in parsed.claim_queries] == [("c", "q")]

    def test_second_query_after_claim_is_not_question_level(self):
        parsed = parse_rewrite_output("<Claim> Tower is in Paris <Query> Eiffel location <Query> Eiffel height")
        assert parsed.question_queries == []
        assert [(c.claim, c.query) for c in parsed.claim_queries] == [("Tower is in Paris", "Eiffel location")]
        assert len(parsed.warnings) == 1
        assert "Eiffel height" in parsed.warnings[0]

    def test_stray_query_between_units_dropped(self):
        parsed = parse_rewrite_output("<Query> x <Claim> A <Query> B <Query> stray <Claim> C <Query> D")
        assert parsed.question_queries == ["x"]
        assert [c.query for c in parsed.claim_queries] == ["B", "D"]
        assert len(parsed.warnings) == 1

    def test_empty_query_dropped(self):
        parsed = parse_rewrite_output("<Claim> A <Query>   <Claim> C <Query> D")
        assert [c.claim for c in parsed.claim_queries] == ["C"]
        assert parsed.warnings

    def test_nothing_parseable(self):
        with pytest.raises(RewriteParseError) as excinfo:
            parse_rewrite_output("I cannot help with that.")
        assert excinfo.value.raw_output == "I cannot help with that."

    def test_round_trip(self):
        rng = random.Random(5)

        def phrase():
            return " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 6)))

        for _ in range(1000):
            question_queries = [phrase() for _ in range(rng.randint(0, 2))]
            claims = [ClaimQuery(claim=phrase(), query=phrase()) for _ in range(rng.randint(1, 5))]
            parsed = parse_rewrite_output(format_rewrite_output(question_queries, claims))
            assert parsed.question_queries == question_queries
            assert parsed.claim_queries == claims
            assert parsed.warnings == []


class TestFilterClaimQueries:
    pairs = [
        ClaimQuery(claim="c1", query="q1"),
        ClaimQuery(claim="c2", query="q2"),
        ClaimQuery(claim="c3", query="q3"),
    ]

    def run_filter(self, known_by_query):
        calls = []

        async def judge_fn(question, answer):
            calls.append((question, answer))
            outcome = known_by_query[question]
            if isinstance(outcome, Exception):
                raise outcome
            return Verdict(known=outcome, raw_output="")

        return asyncio.run(filter_claim_queries(self.pairs, judge_fn)), calls

    def test_mixed_verdicts(self):
        kept, calls = self.run_filter({"q1": True, "q2": False, "q3": True})
        assert kept == ["q2"]
        assert sorted(calls) == [("q1", "c1"), ("q2", "c2"), ("q3", "c3")]

    def test_all_known(self):
        assert self.run_filter({"q1": True, "q2": True, "q3": True})[0] == []

    def test_none_known(self):
        assert self.run_filter({"q1": False, "q2": False, "q3": False})[0] == ["q1", "q2", "q3"]

    def test_judge_failure_keeps_query(self):
        async def judge_fn(question, answer):
            if question == "q2":
                raise InvalidInputError("judge exploded")
            return Verdict(known=True, raw_output="")

        decisions = asyncio.run(judge_claim_queries(self.pairs, judge_fn))
        assert [d.kept for d in decisions] == [False, True, False]
        assert [d.judge_failed for d in decisions] == [False, True, False]


class TestAnnotation:
    def test_request_contains_grammar_and_question(self):
        request = build_annotation_request("Who built the tower?", "Gustave Eiffel built it.")
        assert "<Claim(claim1)> <Search(True/False)> <Query(query1)>" in request
        assert request.count("Who built the tower?") == 1
        assert request.endswith("Text: Gustave Eiffel built it.")

    def test_request_needs_answer(self):
        with pytest.raises(InvalidInputError):
            build_annotation_request("Who built the tower?", "")

    def test_parse_single_triple(self):
        claims = parse_annotation_output("<Claims> <Claim(A)> <Search(True)> <Query(B)> </Claims>")
        assert claims == [ClaimQuery(claim="A", query="B", needs_search=True)]

    def test_search_false_without_query(self):
        claims = parse_annotation_output("<Claim(A)> <Search(False)>")
        assert claims == [ClaimQuery(claim="A", query="", needs_search=False)]

    def test_nested_parentheses(self):
        claims = parse_annotation_output(
            "<Claims> <Claim(A (b) c)> <Search(True)> <Query(q (x))> "
            "<Claim(D)><Search(False)><Query()></Claims>"
        )
        assert [(c.claim, c.query, c.needs_search) for c in claims] == [
            ("A (b) c", "q (x)", True),
            ("D", "", False),
        ]

    def test_nothing_found(self):
        with pytest.raises(AnnotationParseError):
            parse_annotation_output("no claims here")


def balanced_oracle(raw: str, start: int) -> int:
    """Closing index found by scanning prefixes for the first point where opens equal closes"""
    for end in range(start, len(raw)):
        chunk = raw[start - 1:end + 1]
        if chunk.count("(") == chunk.count(")"):
            return end
    return -1


def test_nested_claim_matches_prefix_scan_oracle():
    rng = random.Random(9)
    for _ in range(200):
        inner = ""
        depth = 0
        for _ in range(rng.randint(1, 12)):
            choice = rng.random()
            if choice < 0.25:
                inner += "("
                depth += 1
            elif choice < 0.5 and depth > 0:
                inner += ")"
                depth -= 1
            else:
                inner += rng.choice("abc ")
        inner += ")" * depth
        if not inner.strip():
            inner = "x"
        raw = f"<Claim({inner})> <Search(False)>"
        start = len("<Claim(")
        assert raw[start:balanced_oracle(raw, start)] == inner
        assert parse_annotation_output(raw)[0].claim == inner.strip()


def test_rewrite_service_appends_question_when_no_question_queries():
    script = MockScript(rules=[MockRule(contains="Query Rewrite Output:", response="<Claim> c1 <Query> q1")])

    async def scenario():
        log = ExchangeLog()
        async with mock_gateway(script) as gateway:
            service = RewriteService(gateway, endpoint(EndpointRole.REWRITER, 0.1))
            return await service.rewrite("Who built it?", "Someone built it.", log), log

    result, log = asyncio.run(scenario())
    assert result.question_queries == ["Who built it?"]
    assert [(c.claim, c.query) for c in result.claim_queries] == [("c1", "q1")]
    assert log.exchanges[0].component == Component.REWRITER
    assert log.exchanges[0].exchange.temperature == 0.0


def test_rewrite_service_parse_failure_carries_raw_output():
    script = MockScript(default="nothing useful")

    async def scenario():
        async with mock_gateway(script) as gateway:
            service = RewriteService(gateway, endpoint(EndpointRole.REWRITER))
            await service.rewrite("Who built it?", "Someone built it.")

    with pytest.raises(RewriteParseError) as excinfo:
        asyncio.run(scenario())
    assert excinfo.value.raw_output == "nothing useful"
