import json
import logging
import math
import struct
import zlib
from abc import ABC, abstractmethod
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from ..exceptions import IndexBuildError, IndexFormatError, InvalidInputError
from ..models import BM25Params, Document, RetrievalStage, ScoredDocument
from ..text import tokenize

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"SLIMIDX1"
INDEX_FORMAT_VERSION = 1
# magic, format version, payload length
_HEADER = struct.Struct("<8sHQ")


class InvertedIndex:
    """BM25 inverted index; immutable once built"""

    def __init__(
        self,
        documents: List[Document],
        postings: Dict[str, Tuple[np.ndarray, np.ndarray]],
        doc_lengths: np.ndarray,
        params: Optional[BM25Params] = None,
    ):
        self._documents = list(documents)
        self._postings = postings
        self._doc_lengths = doc_lengths
        self.params = params or BM25Params()
        self._avg_doc_length = float(doc_lengths.mean())

    @property
    def doc_count(self) -> int:
        return len(self._documents)

    @property
    def avg_doc_length(self) -> float:
        return self._avg_doc_length

    @property
    def doc_lengths(self) -> List[int]:
        return self._doc_lengths.tolist()

    @property
    def vocabulary_size(self) -> int:
        return len(self._postings)

    def document(self, ordinal: int) -> Document:
        return self._documents[ordinal]

    def postings(self, term: str) -> List[Tuple[int, int]]:
        if term not in self._postings:
            return []
        ordinals, tfs = self._postings[term]
        return list(zip(ordinals.tolist(), tfs.tolist()))

    def with_params(self, params: BM25Params) -> "InvertedIndex":
        return InvertedIndex(self._documents, self._postings, self._doc_lengths, params)

    def idf(self, term: str) -> float:
        df = len(self._postings[term][0]) if term in self._postings else 0
        n = self.doc_count
        return math.log((n - df + 0.5) / (df + 0.5) + 1.0)

    def scores(self, query: str) -> np.ndarray:
        """BM25 score of every document; repeated query terms contribute once per occurrence."""
        k1, b = self.params.k1, self.params.b
        scores = np.zeros(self.doc_count, dtype=np.float64)
        for term in tokenize(query):
            if term not in self._postings:
                continue
            ordinals, tfs = self._postings[term]
            lengths = self._doc_lengths[ordinals]
            norm = k1 * (1.0 - b + b * lengths / self._avg_doc_length)
            scores[ordinals] += self.idf(term) * (tfs * (k1 + 1.0)) / (tfs + norm)
        return scores

    def search(self, query: str, k: int) -> List[ScoredDocument]:
        """Top-k documents by BM25; zero scores excluded, ties by ascending ordinal"""
        if k <= 0:
            raise InvalidInputError(f"k must be positive, got {k}")
        scores = self.scores(query)
        candidates = np.nonzero(scores > 0)[0]
        if candidates.size == 0:
            return []
        order = candidates[np.lexsort((candidates, -scores[candidates]))][:k]
        return [
            ScoredDocument(
                document=self._documents[i],
                score=float(scores[i]),
                source_query=query,
                stage=RetrievalStage.BM25,
            )
            for i in order.tolist()
        ]

    def to_payload(self) -> Dict[str, object]:
        return {
            "params": self.params.model_dump(),
            "documents": [d.model_dump() for d in self._documents],
            "doc_lengths": self._doc_lengths.tolist(),
            "postings": {
                term: [ords.tolist(), tfs.tolist()]
                for term, (ords, tfs) in sorted(self._postings.items())
            },
        }

    @classmethod
    def from_payload(cls, payload: Dict[str, object]) -> "InvertedIndex":
        postings = {
            term: (np.asarray(ords, dtype=np.int64), np.asarray(tfs, dtype=np.float64))
            for term, (ords, tfs) in payload["postings"].items()
        }
        return cls(
            documents=[Document.model_validate(d) for d in payload["documents"]],
            postings=postings,
            doc_lengths=np.asarray(payload["doc_lengths"], dtype=np.float64),
            params=BM25Params.model_validate(payload["params"]),
        )


def build_index(corpus: Iterable[Document], params: Optional[BM25Params] = None) -> InvertedIndex:
    """Build a BM25 index; tokens are normalized text split on spaces"""
    documents: List[Document] = []
    lengths: List[int] = []
    raw_postings: Dict[str, Tuple[List[int], List[int]]] = {}
    seen_ids = set()

    for ordinal, document in enumerate(corpus):
        if document.doc_id in seen_ids:
            raise IndexBuildError(f"Duplicate doc_id in corpus: {document.doc_id}")
        seen_ids.add(document.doc_id)
        tokens = tokenize(document.text)
        documents.append(document)
        lengths.append(len(tokens))
        for term, tf in Counter(tokens).items():
            ords, tfs = raw_postings.setdefault(term, ([], []))
            ords.append(ordinal)
            tfs.append(tf)

    if not documents:
        raise IndexBuildError("Cannot build an index from an empty corpus")
    if sum(lengths) == 0:
        raise IndexBuildError("Corpus contains no indexable tokens")

    postings = {
        term: (np.asarray(ords, dtype=np.int64), np.asarray(tfs, dtype=np.float64))
        for term, (ords, tfs) in raw_postings.items()
    }
    index = InvertedIndex(documents, postings, np.asarray(lengths, dtype=np.float64), params)
    logger.info(
        f"Built index: {index.doc_count} documents, {index.vocabulary_size} terms, "
        f"avg length {index.avg_doc_length:.2f}"
    )
    return index


class IndexRepository(ABC):
    """Abstract storage for built indexes"""

    @abstractmethod
    def save(self, index: InvertedIndex, path: Union[str, Path]) -> None:
        """Persist an index"""
        pass

    @abstractmethod
    def load(self, path: Union[str, Path]) -> InvertedIndex:
        """Load a persisted index"""
        pass


class FileIndexRepository(IndexRepository):
    """Single-file binary index: versioned SLIMIDX1 header + compressed payload"""

    def save(self, index: InvertedIndex, path: Union[str, Path]) -> None:
        body = json.dumps(index.to_payload(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        payload = zlib.compress(body, 6)
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(target.name + ".tmp")
        with tmp.open("wb") as handle:
            handle.write(_HEADER.pack(INDEX_MAGIC, INDEX_FORMAT_VERSION, len(payload)))
            handle.write(payload)
        tmp.replace(target)
        logger.info(f"Saved index to {target} ({len(payload)} bytes)")

    def load(self, path: Union[str, Path]) -> InvertedIndex:
        source = Path(path)
        try:
            blob = source.read_bytes()
        except OSError as e:
            raise IndexFormatError(f"Cannot read index {source}: {e}")
        if len(blob) < _HEADER.size:
            raise IndexFormatError(f"{source} is too short to be an index file")

        magic, version, length = _HEADER.unpack_from(blob)
        if magic != INDEX_MAGIC:
            raise IndexFormatError(f"{source} is not an index file (bad magic {magic!r})")
        if version != INDEX_FORMAT_VERSION:
            raise IndexFormatError(f"{source} has unsupported format version {version}")
        payload = blob[_HEADER.size:]
        if len(payload) != length:
            raise IndexFormatError(f"{source} is truncated: expected {length} payload bytes")

        try:
            data = json.loads(zlib.decompress(payload).decode("utf-8"))
            return InvertedIndex.from_payload(data)
        except (zlib.error, ValueError, KeyError, TypeError) as e:
            raise IndexFormatError(f"{source} has a corrupt payload: {e}")
