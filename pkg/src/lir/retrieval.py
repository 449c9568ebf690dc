"""First-stage retrieval: token search, candidate gathering, exact MaxSim re-scoring."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Set, Tuple

import numpy as np

from .core import ScoredDoc, check_token_matrix, drop_positions, rank_scored, score_batched
from .errors import CorruptIndexError, DimensionError, ParameterError
from .index import DEFAULT_K_PRIME, EmbeddingStore, TokenIndex, TokenSearchResult, search_tokens


@dataclass(frozen=True)
class RetrievalParams:
    """Knobs for :func:`retrieve`.

    Attributes:
        k_prime: corpus tokens fetched per query token.
        top_k: documents returned.
        normalize: also report score / number of query tokens.
        nprobe: IVF cells searched per query token (None = index default;
            ignored for flat indexes).
        skip_positions: query token positions dropped before search and
            before counting tokens for normalization.
        batch_size, workers: candidate scoring granularity and thread count.
    """

    k_prime: int = DEFAULT_K_PRIME
    top_k: int = 10
    normalize: bool = False
    nprobe: Optional[int] = None
    skip_positions: Tuple[int, ...] = ()
    batch_size: int = 64
    workers: int = 1

    def __post_init__(self):
        if self.k_prime < 1:
            raise ParameterError(f"k_prime must be >= 1, got {self.k_prime}")
        if self.top_k < 1:
            raise ParameterError(f"top_k must be >= 1, got {self.top_k}")


def gather_candidates(result: TokenSearchResult, store: EmbeddingStore) -> Set[int]:
    """Documents owning any retrieved token row.

    Raises:
        CorruptIndexError: a row id lies outside the store.
    """
    rows = result.ids[result.ids >= 0]
    if rows.size and int(rows.max()) >= store.num_tokens:
        bad = int(rows[rows >= store.num_tokens][0])
        raise CorruptIndexError(f"token row {bad} outside store of {store.num_tokens} rows")
    if (result.ids < -1).any():
        raise CorruptIndexError(f"negative token row {int(result.ids.min())}")
    return {int(d) for d in np.unique(store.token_to_doc[rows])}


def retrieve_with_tokens(
    index: TokenIndex, query, params: RetrievalParams = RetrievalParams()
) -> Tuple[List[ScoredDoc], TokenSearchResult]:
    """Like :func:`retrieve` but also returns the token search result (I/D matrices)."""
    q = check_token_matrix(query, "query")
    q = drop_positions(q, params.skip_positions)
    if q.shape[1] != index.store.dim:
        raise DimensionError(f"query dim {q.shape[1]} != index dim {index.store.dim}")
    result = search_tokens(index, q, params.k_prime, params.nprobe)
    candidates = sorted(gather_candidates(result, index.store))
    store = index.store
    scored = score_batched(
        q, [(d, store.doc(d)) for d in candidates], params.batch_size, params.workers
    )
    ranked = rank_scored(scored, params.top_k, q.shape[0] if params.normalize else None)
    return ranked, result


def retrieve(index: TokenIndex, query, params: RetrievalParams = RetrievalParams()) -> List[ScoredDoc]:
    """Rank documents for one query.

    Each query token fetches its k' nearest corpus tokens; the owning
    documents become candidates and are scored by exact MaxSim against
    their full stored token matrices. Sorted by score descending, ties by
    ascending doc id, at most ``top_k`` long.
    """
    return retrieve_with_tokens(index, query, params)[0]
