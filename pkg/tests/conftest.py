"""Shared fixtures: the mock model server mounted in-process and the toy data set."""

from pathlib import Path

import httpx
import pytest

from slimrag.api import create_mock_app, load_mock_script
from slimrag.config import load_pipeline_config
from slimrag.container import Container
from slimrag.models import EndpointRole, MockScript, ModelEndpoint, PipelineConfig
from slimrag.repositories.index_store import build_index
from slimrag.repositories.jsonl_store import iter_corpus, load_dataset
from slimrag.services.gateway_service import ModelGateway

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
MOCK_URL = "http://mock/v1"


def mock_transport(script: MockScript) -> httpx.ASGITransport:
    return httpx.ASGITransport(app=create_mock_app(script))


def mock_gateway(script: MockScript, **kwargs) -> ModelGateway:
    """Gateway whose HTTP traffic goes straight to the mock app, no sockets"""
    kwargs.setdefault("backoff", 0)
    return ModelGateway(transport=mock_transport(script), **kwargs)


def endpoint(role: EndpointRole, cost_weight: float = 1.0) -> ModelEndpoint:
    return ModelEndpoint(role=role, base_url=MOCK_URL, model=f"mock-{role.value}", cost_weight=cost_weight)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def toy_script() -> MockScript:
    return load_mock_script(FIXTURES / "mock_script.json")


@pytest.fixture
def toy_config():
    return load_pipeline_config(FIXTURES / "pipeline_config.json")


@pytest.fixture
def toy_questions():
    return load_dataset(FIXTURES / "toy_dataset.jsonl")


@pytest.fixture
def toy_index():
    return build_index(iter_corpus(FIXTURES / "toy_corpus.jsonl"))


class RoutingTransport(httpx.AsyncBaseTransport):
    """Sends requests for the host "down" a fixed error, everything else to the mock app"""

    def __init__(self, script: MockScript, status_code: int = 400):
        self.inner = mock_transport(script)
        self.status_code = status_code

    async def handle_async_request(self, request: httpx.Request) -> httpx.Response:
        if request.url.host == "down":
            return httpx.Response(self.status_code, text="endpoint is down")
        return await self.inner.handle_async_request(request)


def with_mode(config, mode: str, **changes):
    """Copy of a pipeline config under another mode, revalidated"""
    data = config.model_dump()
    data.update(mode=mode, **changes)
    return PipelineConfig.model_validate(data)


async def run_traces(config, script, index, questions, transport=None):
    container = Container(config, index=index, transport=transport or mock_transport(script))
    try:
        return [await container.workflow_service.run_question(q) for q in questions]
    finally:
        await container.aclose()
