from pathlib import Path
from typing import Union

from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from .exceptions import ConfigurationError
from .models import PipelineConfig


class Settings(BaseSettings):
    """Application settings with environment variable support"""

    # General
    app_name: str = "slimrag"
    app_version: str = "1.0.0"
    log_level: str = "INFO"

    # Gateway
    request_timeout: float = 60.0
    max_retries: int = 3
    retry_backoff: float = 0.5
    endpoint_concurrency: int = 4
    default_max_tokens: int = 512

    # Retrieval
    bm25_k1: float = 1.2
    bm25_b: float = 0.75

    # Mock model server
    mock_host: str = "127.0.0.1"
    mock_port: int = 8011
    mock_embedding_dim: int = 64

    model_config = SettingsConfigDict(
        env_prefix="SLIMRAG_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )


settings = Settings()


def load_pipeline_config(path: Union[str, Path], **overrides) -> PipelineConfig:
    """Load and validate a JSON pipeline config, applying CLI overrides on top."""
    config_path = Path(path)
    try:
        raw = config_path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"Cannot read config {config_path}: {e}")

    try:
        config = PipelineConfig.model_validate_json(raw)
        if overrides:
            data = config.model_dump(by_alias=True)
            data.update({k: v for k, v in overrides.items() if v is not None})
            config = PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid config {config_path}: {e}")
    return config
