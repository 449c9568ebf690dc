"""Late-interaction (MaxSim) retrieval over precomputed token embeddings."""

__version__ = "0.1.0"

from .core import ScoredDoc, cosine, maxsim, normalized_maxsim  # noqa: E402
from .errors import *  # noqa: E402,F401,F403
from .index import (  # noqa: E402
    EmbeddingStore,
    TokenIndex,
    TokenSearchResult,
    build_flat,
    build_ivf,
    build_store,
    load_index,
    save_index,
    search_tokens,
)
from .rerank import rerank_batch, rerank_preindexed  # noqa: E402
from .retrieval import RetrievalParams, gather_candidates, retrieve  # noqa: E402
