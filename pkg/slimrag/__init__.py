"""
slimrag - retrieval routing for retrieval-augmented question answering.

A small proxy model answers first; its heuristic answer drives a retrieval
necessity judgment and claim-level query rewriting, so the large reader model
only retrieves what it is missing.
"""

__version__ = "1.0.0"
__description__ = "Proxy-model retrieval routing for RAG question answering"

from .config import settings, load_pipeline_config
from .container import Container

__all__ = [
    "settings",              # Application configuration
    "load_pipeline_config",  # JSON pipeline config loader
    "Container",             # Dependency injection container
    "__version__",
    "__description__",
]
