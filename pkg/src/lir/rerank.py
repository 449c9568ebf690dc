"""Re-ranking an external candidate list by MaxSim.

Two entry points share one scoring path: :func:`rerank_batch` takes the
candidates' token matrices directly, :func:`rerank_preindexed` looks them
up in a saved :class:`~lir.index.EmbeddingStore`.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import ScoredDoc, check_token_matrix, rank_scored, score_batched
from .errors import (
    DimensionError,
    DuplicateCandidateError,
    EmptyInputError,
    MissingDocumentError,
)
from .index import EmbeddingStore

DEFAULT_BATCH_SIZE = 64


def _rank(query, items, top_k, normalize, min_score, batch_size, workers) -> List[ScoredDoc]:
    scored = score_batched(query, items, batch_size, workers)
    return rank_scored(scored, top_k, query.shape[0] if normalize else None, min_score)


def _check_unique(ids: Sequence[int]) -> None:
    seen = set()
    for d in ids:
        if d in seen:
            raise DuplicateCandidateError(f"document {d} listed twice among candidates")
        seen.add(d)


def rerank_batch(
    query,
    candidates: Sequence[Tuple[int, np.ndarray]],
    top_k: Optional[int] = None,
    *,
    normalize: bool = False,
    min_score: Optional[float] = None,
    batch_size: int = DEFAULT_BATCH_SIZE,
    workers: int = 1,
) -> List[ScoredDoc]:
    """Score every (doc_id, token matrix) candidate and return the best ``top_k``.

    ``min_score`` drops results below a threshold on the reported score
    (normalized when ``normalize`` is set).

    Raises:
        EmptyInputError: no candidates.
        DuplicateCandidateError: a doc id repeats.
        DimensionError: a candidate's dim differs from the query's.
    """
    q = check_token_matrix(query, "query")
    if len(candidates) == 0:
        raise EmptyInputError("no candidates to re-rank")
    _check_unique([d for d, _ in candidates])
    items = []
    for doc_id, mat in candidates:
        m = check_token_matrix(mat, f"candidate {doc_id}")
        if m.shape[1] != q.shape[1]:
            raise DimensionError(f"candidate {doc_id} has dim {m.shape[1]}, query has {q.shape[1]}")
        items.append((int(doc_id), m))
    return _rank(q, items, top_k, normalize, min_score, batch_size, workers)


def rerank_preindexed(
    store: EmbeddingStore,
    query,
    candidate_ids: Sequence[int],
    top_k: Optional[int] = None,
    *,
    normalize: bool = False,
    min_score: Optional[float] = None,
    batch_size: int = DEFAULT_BATCH_SIZE,
    workers: int = 1,
) -> List[ScoredDoc]:
    """Same contract as :func:`rerank_batch`, reading candidates from ``store``.

    Raises:
        MissingDocumentError: an id is not in the store.
    """
    q = check_token_matrix(query, "query")
    if q.shape[1] != store.dim:
        raise DimensionError(f"query dim {q.shape[1]} != store dim {store.dim}")
    if len(candidate_ids) == 0:
        raise EmptyInputError("no candidates to re-rank")
    _check_unique(candidate_ids)
    items = []
    for d in candidate_ids:
        d = int(d)
        if not 0 <= d < store.num_docs:
            raise MissingDocumentError(d, store.num_docs)
        items.append((d, store.doc(d)))
    return _rank(q, items, top_k, normalize, min_score, batch_size, workers)
