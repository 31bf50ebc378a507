"""
Deterministic mock model server.

Speaks the chat-completions and embeddings protocol the gateway uses. Chat
replies come from a MockScript (first matching rule wins); embeddings are
unit vectors seeded from a CRC32 of the input text, so the same text always
maps to the same vector.
"""

import asyncio
import json
import logging
import socket
import time
import zlib
from pathlib import Path
from typing import List, Union

import numpy as np
import uvicorn
from fastapi import APIRouter, FastAPI
from pydantic import ValidationError

from .config import settings
from .exceptions import ConfigurationError, MockServerError
from .models import ChatCompletionRequest, EmbeddingRequest, MockScript
from .services.gateway_service import count_whitespace_tokens

logger = logging.getLogger(__name__)


def mock_embedding(text: str, dim: int) -> List[float]:
    rng = np.random.default_rng(zlib.crc32(text.encode("utf-8")))
    vector = rng.standard_normal(dim)
    return (vector / np.linalg.norm(vector)).tolist()


def load_mock_script(path: Union[str, Path]) -> MockScript:
    script_path = Path(path)
    try:
        data = json.loads(script_path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigurationError(f"Cannot read mock script {script_path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Mock script {script_path} is not valid JSON: {e}")
    if isinstance(data, dict):
        data.setdefault("embedding_dim", settings.mock_embedding_dim)
    try:
        return MockScript.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid mock script {script_path}: {e}")


def create_mock_app(script: MockScript) -> FastAPI:
    """Build the mock server app for one script"""
    app = FastAPI(
        title=f"{settings.app_name} mock model server",
        version=settings.app_version,
    )
    router = APIRouter()

    async def _delay():
        if script.latency_ms:
            await asyncio.sleep(script.latency_ms / 1000)

    @router.post("/chat/completions")
    async def chat_completions(request: ChatCompletionRequest):
        """Answer with the first scripted rule whose substring occurs in the prompt"""
        await _delay()
        prompt = "\n".join(m.content for m in request.messages)
        content = script.respond(prompt)
        prompt_tokens = sum(count_whitespace_tokens(m.content) for m in request.messages)
        completion_tokens = count_whitespace_tokens(content)
        logger.debug(f"Mock chat: {prompt[:80]!r} -> {content[:80]!r}")
        return {
            "id": f"mock-{zlib.crc32(prompt.encode('utf-8')):08x}",
            "object": "chat.completion",
            "created": int(time.time()),
            "model": request.model,
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": content},
                    "finish_reason": "stop",
                }
            ],
            "usage": {
                "prompt_tokens": prompt_tokens,
                "completion_tokens": completion_tokens,
                "total_tokens": prompt_tokens + completion_tokens,
            },
        }

    @router.post("/embeddings")
    async def embeddings(request: EmbeddingRequest):
        await _delay()
        texts = [request.input] if isinstance(request.input, str) else request.input
        data = []
        for i, text in enumerate(texts):
            vector = script.embeddings.get(text) or mock_embedding(text, script.embedding_dim)
            data.append({"object": "embedding", "index": i, "embedding": vector})
        tokens = sum(count_whitespace_tokens(t) for t in texts)
        return {
            "object": "list",
            "model": request.model,
            "data": data,
            "usage": {"prompt_tokens": tokens, "total_tokens": tokens},
        }

    app.include_router(router)
    app.include_router(router, prefix="/v1")

    @app.get("/health")
    async def health_check():
        return {"status": "healthy", "rules": len(script.rules)}

    return app


def _port_in_use(host: str, port: int) -> bool:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        try:
            sock.bind((host, port))
        except OSError:
            return True
    return False


def mock_llm_serve(script_path: Union[str, Path], host: str = None, port: int = None) -> None:
    """Serve a mock script until interrupted"""
    host = host or settings.mock_host
    port = port or settings.mock_port
    script = load_mock_script(script_path)
    if _port_in_use(host, port):
        raise MockServerError(f"Port {port} on {host} is already in use")

    logger.info(f"Mock model server on http://{host}:{port} with {len(script.rules)} rules")
    uvicorn.run(create_mock_app(script), host=host, port=port, log_level=settings.log_level.lower())
