import asyncio
import json

import pytest

from conftest import RoutingTransport, mock_gateway, mock_transport, with_mode
from slimrag.container import Container
from slimrag.exceptions import DatasetError
from slimrag.models import EndpointRole, PipelineConfig, PromptStyle
from slimrag.repositories.jsonl_store import iter_jsonl
from slimrag.services.evaluation_service import evaluate_run
from slimrag.services.run_service import generate_heuristic_answers, run_dataset


def run(config, script, index, dataset, out, transport=None, **kwargs):
    async def scenario():
        container = Container(config, index=index, transport=transport or mock_transport(script))
        try:
            return await run_dataset(dataset, config, out, container.workflow_service, **kwargs)
        finally:
            await container.aclose()

    return asyncio.run(scenario())


def test_toy_run_end_to_end(tmp_path, fixtures_dir, toy_config, toy_script, toy_index):
    dataset = fixtures_dir / "toy_dataset.jsonl"
    out = tmp_path / "results.jsonl"
    trace_out = tmp_path / "rewrite_trace.jsonl"

    summary = run(toy_config, toy_script, toy_index, dataset, out, rewrite_trace_path=trace_out)
    assert (summary.total, summary.succeeded, summary.failed) == (10, 10, 0)
    assert not summary.run_failed

    lines = list(iter_jsonl(out))
    assert [line["id"] for line in lines] == [f"q{i:02d}" for i in range(1, 11)]
    assert set(lines[0]) == {"id", "answer", "plan_kind", "queries", "cost"}
    assert lines[0]["plan_kind"] == "direct"
    assert lines[2]["queries"] == ["Eiffel Tower completion date", "Eiffel Tower completed year"]
    assert lines[2]["cost"]["judge"] > 0

    report = evaluate_run(out, dataset, PromptStyle.SHORT_FORM)
    assert report.aggregates["em"] == pytest.approx(0.85)
    assert report.aggregates["hit_at_1"] == pytest.approx(0.9)
    assert report.aggregates["strict_em"] == 0.0
    assert report.cost.chat > 0

    traces = {t["question_id"]: t for t in iter_jsonl(trace_out)}
    assert len(traces) == 10
    assert [c["kept"] for c in traces["q03"]["claims"]] == [False, True, False]
    assert traces["q05"]["question_queries"] == ["Which river flows through Cairo?"]


def test_vanilla_run_has_no_extra_cost(tmp_path, fixtures_dir, toy_config, toy_script, toy_index):
    out = tmp_path / "vanilla.jsonl"
    run(with_mode(toy_config, "vanilla"), toy_script, toy_index, fixtures_dir / "toy_dataset.jsonl", out)
    for line in iter_jsonl(out):
        assert line["cost"]["extra_cost_ratio"] == 0
        assert line["queries"] == []


def test_missing_dataset_writes_nothing(tmp_path, toy_config, toy_script, toy_index):
    out = tmp_path / "results.jsonl"
    with pytest.raises(DatasetError):
        run(toy_config, toy_script, toy_index, tmp_path / "absent.jsonl", out)
    assert not out.exists()


def test_reader_outage_fails_run(tmp_path, fixtures_dir, toy_config, toy_script, toy_index):
    data = with_mode(toy_config, "vanilla").model_dump()
    data["endpoints"][EndpointRole.READER]["base_url"] = "http://down/v1"
    config = PipelineConfig.model_validate(data)
    out = tmp_path / "results.jsonl"

    summary = run(config, toy_script, toy_index, fixtures_dir / "toy_dataset.jsonl", out,
                  transport=RoutingTransport(toy_script))
    assert summary.failed == 10
    assert summary.run_failed
    lines = list(iter_jsonl(out))
    assert len(lines) == 10
    assert all(set(line) == {"id", "error"} for line in lines)


def test_heuristic_answers(tmp_path, toy_config, toy_script, toy_questions):
    out = tmp_path / "answers.jsonl"

    async def scenario():
        async with mock_gateway(toy_script) as gateway:
            return await generate_heuristic_answers(toy_questions, toy_config, gateway, out)

    assert asyncio.run(scenario()) == 10
    first = json.loads(out.read_text(encoding="utf-8").splitlines()[0])
    assert first["question_id"] == "q01"
    assert first["text"] == "Paris is the capital of France."
