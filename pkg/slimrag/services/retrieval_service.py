import logging
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from ..exceptions import GatewayError, InvalidInputError
from ..models import ModelEndpoint, ReferenceSet, RetrievalStage, ScoredDocument
from ..repositories.index_store import InvertedIndex
from .gateway_service import ModelGateway

logger = logging.getLogger(__name__)

QUERY_PREFIX = "query: "
PASSAGE_PREFIX = "passage: "


def merge_references(per_query: Mapping[str, Sequence[ScoredDocument]], budget: int) -> ReferenceSet:
    """Round-robin across queries in input order, skipping doc_ids already taken."""
    if budget <= 0:
        raise InvalidInputError(f"budget must be positive, got {budget}")
    lists = [(query, list(docs)) for query, docs in per_query.items()]
    entries: List[ScoredDocument] = []
    provenance: Dict[str, List[str]] = {query: [] for query, _ in lists}
    taken = set()

    depth = 0
    longest = max((len(docs) for _, docs in lists), default=0)
    while len(entries) < budget and depth < longest:
        for query, docs in lists:
            if len(entries) >= budget:
                break
            if depth >= len(docs):
                continue
            doc = docs[depth]
            if doc.document.doc_id in taken:
                continue
            taken.add(doc.document.doc_id)
            entries.append(doc)
            provenance[query].append(doc.document.doc_id)
        depth += 1

    return ReferenceSet(entries=entries, per_query_provenance=provenance)


class RetrievalService:
    """BM25 first stage, embedding rerank, and multi-query merging"""

    def __init__(
        self,
        index: InvertedIndex,
        gateway: Optional[ModelGateway] = None,
        embedder: Optional[ModelEndpoint] = None,
        bm25_depth: int = 100,
        rerank_depth: int = 5,
    ):
        self.index = index
        self.gateway = gateway
        self.embedder = embedder
        self.bm25_depth = bm25_depth
        self.rerank_depth = rerank_depth

    def search(self, query: str, k: int) -> List[ScoredDocument]:
        return self.index.search(query, k)

    async def rerank(
        self,
        query: str,
        candidates: Sequence[ScoredDocument],
        top_k: int,
        warnings: Optional[List[str]] = None,
    ) -> List[ScoredDocument]:
        """Reorder candidates by cosine similarity to the query; BM25 order breaks ties"""
        if not candidates:
            raise InvalidInputError("rerank() needs at least one candidate")
        if len(candidates) == 1:
            return [candidates[0].model_copy(update={"stage": RetrievalStage.RERANKED})]

        if self.gateway is None or self.embedder is None:
            return self._fallback(candidates, top_k, "no embedder configured", warnings)

        texts = [QUERY_PREFIX + query] + [
            f"{PASSAGE_PREFIX}{c.document.title} {c.document.text}" for c in candidates
        ]
        try:
            vectors = await self.gateway.embed(self.embedder, texts)
        except GatewayError as e:
            return self._fallback(candidates, top_k, str(e), warnings)

        similarities = vectors[1:] @ vectors[0]
        order = np.argsort(-similarities, kind="stable")[:top_k]
        return [
            candidates[i].model_copy(
                update={"score": float(similarities[i]), "stage": RetrievalStage.RERANKED}
            )
            for i in order.tolist()
        ]

    @staticmethod
    def _fallback(
        candidates: Sequence[ScoredDocument],
        top_k: int,
        reason: str,
        warnings: Optional[List[str]],
    ) -> List[ScoredDocument]:
        message = f"rerank fell back to BM25 order: {reason}"
        logger.warning(message)
        if warnings is not None:
            warnings.append(message)
        return list(candidates[:top_k])

    async def retrieve(
        self,
        queries: Sequence[str],
        budget: int,
        warnings: Optional[List[str]] = None,
    ) -> ReferenceSet:
        """Search and rerank each query, then merge the per-query lists to the budget"""
        per_query: Dict[str, List[ScoredDocument]] = {}
        for query in queries:
            if query in per_query:
                continue
            hits = self.search(query, self.bm25_depth)
            if hits:
                hits = await self.rerank(query, hits, self.rerank_depth, warnings)
            per_query[query] = hits
            logger.debug(f"Query {query!r}: {len(hits)} documents after rerank")
        return merge_references(per_query, budget)
