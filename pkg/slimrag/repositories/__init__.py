"""
Repositories Layer - Data Access Components

The persisted BM25 index and the JSONL files (datasets, corpora, answers,
results) the pipeline reads and writes.
"""

from .index_store import IndexRepository, FileIndexRepository, InvertedIndex, build_index
from .jsonl_store import JsonlWriter, iter_corpus, load_dataset

__all__ = [
    "IndexRepository",
    "FileIndexRepository",
    "InvertedIndex",
    "build_index",
    "JsonlWriter",
    "iter_corpus",
    "load_dataset",
]
