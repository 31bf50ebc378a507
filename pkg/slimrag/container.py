from pathlib import Path
from typing import Optional, Union

import httpx

from .config import settings
from .exceptions import ConfigurationError
from .models import BM25Params, EndpointRole, PipelineConfig, PipelineMode
from .repositories.index_store import FileIndexRepository, InvertedIndex
from .services.gateway_service import ModelGateway
from .services.retrieval_service import RetrievalService
from .services.workflow_service import WorkflowService

_RETRIEVING_MODES = {PipelineMode.SLIMPLM, PipelineMode.DIRECT_RAG, PipelineMode.SELF_EVAL}


def build_gateway(transport: Optional[httpx.AsyncBaseTransport] = None) -> ModelGateway:
    return ModelGateway(
        timeout=settings.request_timeout,
        max_retries=settings.max_retries,
        backoff=settings.retry_backoff,
        concurrency=settings.endpoint_concurrency,
        default_max_tokens=settings.default_max_tokens,
        transport=transport,
    )


class Container:
    """Dependency injection container for one pipeline run"""

    def __init__(
        self,
        config: PipelineConfig,
        index_path: Optional[Union[str, Path]] = None,
        bm25_params: Optional[BM25Params] = None,
        transport: Optional[httpx.AsyncBaseTransport] = None,
        index: Optional[InvertedIndex] = None,
    ):
        self.config = config
        self._index_path = index_path
        self._bm25_params = bm25_params
        self._transport = transport
        self._index = index
        self._services = {}
        self._initialize_services()

    def _initialize_services(self):
        """Initialize all services"""
        # Infrastructure layer
        self._services['gateway'] = build_gateway(self._transport)
        self._services['index_repository'] = FileIndexRepository()

        # Domain services
        index = self._load_index()
        if index is not None:
            self._services['retrieval_service'] = RetrievalService(
                index=index,
                gateway=self._services['gateway'],
                embedder=self.config.endpoints.get(EndpointRole.EMBEDDER),
                bm25_depth=self.config.bm25_depth,
                rerank_depth=self.config.rerank_depth,
            )

        # Application services
        self._services['workflow_service'] = WorkflowService(
            config=self.config,
            gateway=self._services['gateway'],
            retrieval_service=self._services.get('retrieval_service'),
        )

    def _load_index(self) -> Optional[InvertedIndex]:
        index = self._index
        if index is None and self._index_path is not None:
            index = self._services['index_repository'].load(self._index_path)
        if index is None:
            if self.config.mode in _RETRIEVING_MODES:
                raise ConfigurationError(
                    f"mode {self.config.mode.value} may retrieve and needs a corpus index"
                )
            return None
        if self._bm25_params is not None:
            index = index.with_params(self._bm25_params)
        return index

    def get(self, service_name: str):
        """Get a service by name"""
        if service_name not in self._services:
            raise ValueError(f"Service {service_name} not found")
        return self._services[service_name]

    async def aclose(self) -> None:
        await self.gateway.aclose()

    # Convenience properties
    @property
    def gateway(self) -> ModelGateway:
        return self.get('gateway')

    @property
    def retrieval_service(self) -> RetrievalService:
        return self.get('retrieval_service')

    @property
    def workflow_service(self) -> WorkflowService:
        return self.get('workflow_service')
