import asyncio
import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence

import httpx
import numpy as np
from tenacity import (
    AsyncRetrying,
    before_sleep_log,
    retry_if_exception,
    stop_after_attempt,
    wait_exponential,
)

from ..exceptions import (
    EmbeddingIntegrityError,
    GatewayDecodeError,
    GatewayProtocolError,
    GatewayTransportError,
    InvalidInputError,
)
from ..models import ChatExchange, ChatMessage, EndpointRole, MessageRole, ModelEndpoint

logger = logging.getLogger(__name__)

_TRANSIENT_STATUS = {429, 500, 502, 503, 504}


def count_whitespace_tokens(text: str) -> int:
    return len(text.split())


class _TransientStatus(Exception):
    def __init__(self, response: httpx.Response):
        super().__init__(f"HTTP {response.status_code}")
        self.response = response


def _is_transient(exc: BaseException) -> bool:
    return isinstance(exc, (httpx.TransportError, _TransientStatus))


class ModelGateway:
    """Client for chat-completion and embedding endpoints with retries and per-endpoint limits"""

    def __init__(
        self,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        concurrency: int = 4,
        default_max_tokens: int = 512,
        transport: Optional[httpx.AsyncBaseTransport] = None,
    ):
        if max_retries < 1:
            raise InvalidInputError("max_retries must be at least 1")
        self.max_retries = max_retries
        self.backoff = backoff
        self.concurrency = concurrency
        self.default_max_tokens = default_max_tokens
        self._client = httpx.AsyncClient(timeout=timeout, transport=transport)
        self._limits: Dict[str, asyncio.Semaphore] = {}

    async def __aenter__(self) -> "ModelGateway":
        return self

    async def __aexit__(self, *exc_info) -> None:
        await self.aclose()

    async def aclose(self) -> None:
        await self._client.aclose()

    def _limit_for(self, endpoint: ModelEndpoint) -> asyncio.Semaphore:
        key = f"{endpoint.role.value}|{endpoint.base_url}|{endpoint.model_name}"
        if key not in self._limits:
            self._limits[key] = asyncio.Semaphore(self.concurrency)
        return self._limits[key]

    def _headers(self, endpoint: ModelEndpoint) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(endpoint.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    async def _post(self, endpoint: ModelEndpoint, path: str, payload: Dict[str, Any]) -> Any:
        url = f"{endpoint.base_url}{path}"
        headers = self._headers(endpoint)
        if logger.isEnabledFor(logging.DEBUG):
            redacted = {k: ("***" if k == "Authorization" else v) for k, v in headers.items()}
            logger.debug(f"POST {url} headers={redacted} body={json.dumps(payload)[:2000]}")

        limit = self._limit_for(endpoint)

        async def send() -> httpx.Response:
            # the slot is held per attempt, not across backoff sleeps
            async with limit:
                response = await self._client.post(url, headers=headers, json=payload)
            if response.status_code in _TRANSIENT_STATUS:
                raise _TransientStatus(response)
            return response

        retrying = AsyncRetrying(
            stop=stop_after_attempt(self.max_retries),
            wait=wait_exponential(multiplier=self.backoff),
            retry=retry_if_exception(_is_transient),
            before_sleep=before_sleep_log(logger, logging.WARNING),
            reraise=True,
        )
        try:
            response = await retrying(send)
        except _TransientStatus as e:
            raise GatewayProtocolError(e.response.status_code, e.response.text)
        except httpx.TransportError as e:
            raise GatewayTransportError(
                f"{url} unreachable after {self.max_retries} attempts: {e!r}"
            )

        if not response.is_success:
            raise GatewayProtocolError(response.status_code, response.text)
        logger.debug(f"Response from {url}: {response.text[:2000]}")
        try:
            return response.json()
        except ValueError as e:
            raise GatewayDecodeError(f"Malformed JSON from {url}: {e}")

    async def chat(
        self,
        endpoint: ModelEndpoint,
        messages: Sequence[ChatMessage],
        temperature: Optional[float] = None,
        max_tokens: Optional[int] = None,
    ) -> ChatExchange:
        """Run one chat completion and return the exchange with its token counts"""
        if endpoint.role == EndpointRole.EMBEDDER:
            raise InvalidInputError("chat() cannot be called on an embedder endpoint")
        if not any(m.role == MessageRole.USER for m in messages):
            raise InvalidInputError("chat() needs at least one user message")
        if temperature is None:
            temperature = endpoint.default_temperature()
        if max_tokens is None:
            max_tokens = endpoint.max_tokens or self.default_max_tokens
        if max_tokens <= 0:
            raise InvalidInputError(f"max_tokens must be positive, got {max_tokens}")
        if temperature < 0:
            raise InvalidInputError(f"temperature must be non-negative, got {temperature}")

        payload = {
            "model": endpoint.model_name,
            "messages": [m.model_dump(mode="json") for m in messages],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        data = await self._post(endpoint, "/chat/completions", payload)

        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as e:
            raise GatewayDecodeError(f"Chat response lacks choices[0].message.content: {e!r}")

        usage = data.get("usage") if isinstance(data, dict) else None
        approximate = not (
            isinstance(usage, dict)
            and isinstance(usage.get("prompt_tokens"), int)
            and isinstance(usage.get("completion_tokens"), int)
        )
        if approximate:
            prompt_tokens = sum(count_whitespace_tokens(m.content) for m in messages)
            completion_tokens = count_whitespace_tokens(text)
        else:
            prompt_tokens = usage["prompt_tokens"]
            completion_tokens = usage["completion_tokens"]

        return ChatExchange(
            messages=list(messages),
            temperature=temperature,
            max_tokens=max_tokens,
            response_text=text,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            approximate_usage=approximate,
        )

    async def embed(self, endpoint: ModelEndpoint, texts: Sequence[str]) -> np.ndarray:
        """Embed texts; returns one L2-normalized row per input"""
        if endpoint.role != EndpointRole.EMBEDDER:
            raise InvalidInputError("embed() requires an embedder endpoint")
        if not texts:
            raise InvalidInputError("embed() needs at least one text")

        data = await self._post(
            endpoint, "/embeddings", {"model": endpoint.model_name, "input": list(texts)}
        )
        try:
            items = sorted(data["data"], key=lambda item: item.get("index", 0))
            rows = [item["embedding"] for item in items]
        except (KeyError, TypeError, AttributeError) as e:
            raise GatewayDecodeError(f"Embedding response lacks data[].embedding: {e!r}")
        if len(rows) != len(texts):
            raise GatewayDecodeError(f"Expected {len(texts)} embeddings, got {len(rows)}")

        dims = {len(row) for row in rows}
        if len(dims) != 1 or 0 in dims:
            raise EmbeddingIntegrityError(f"Embedding batch has inconsistent dimensions {sorted(dims)}")

        vectors = np.asarray(rows, dtype=np.float64)
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise EmbeddingIntegrityError("Endpoint returned a zero vector")
        return vectors / norms
