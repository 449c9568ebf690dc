"""Negative selection for building (sentence, positive, negative) training triplets.

Two strategies:

* random: the negative is another pair's positive, drawn uniformly.
* hard: other pairs' positives are ranked by cosine between their embedding
  and this pair's sentence embedding; the negative is taken from the top of
  that ranking. Embeddings come from an external sentence encoder.

Random negatives are the better default when recall matters most; hard
negatives sharpen precision but raise the chance of picking an unlabelled
relevant passage.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import ParameterError

DEFAULT_TOP_N = 10


def canonical_text(text: str) -> str:
    """NFC form with runs of whitespace collapsed; used for equality checks."""
    return " ".join(unicodedata.normalize("NFC", text).split())


@dataclass
class PairRecord:
    pair_id: int
    sentence: str
    positive: str
    sentence_embedding: Optional[np.ndarray] = None
    positive_embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.sentence.strip() or not self.positive.strip():
            raise ValueError(f"pair {self.pair_id}: sentence and positive must be non-empty")


@dataclass(frozen=True)
class TripletRecord:
    sentence: str
    positive: str
    negative: str

    def __post_init__(self):
        if canonical_text(self.negative) == canonical_text(self.positive):
            raise ValueError("negative equals positive")


def _ordered(pairs: Sequence[PairRecord]) -> List[PairRecord]:
    ids = [p.pair_id for p in pairs]
    if len(set(ids)) != len(ids):
        raise ParameterError("pair ids must be unique")
    return sorted(pairs, key=lambda p: p.pair_id)


def mine_random(pairs: Sequence[PairRecord], seed: int) -> List[TripletRecord]:
    """One triplet per pair with a uniformly drawn negative from the other positives.

    Candidates whose text equals the pair's own positive (after whitespace
    and NFC normalization) are not eligible. Output is ordered by pair id.

    Raises:
        ParameterError: fewer than 2 pairs, or a pair with no eligible
            negative (every positive identical).
    """
    if len(pairs) < 2:
        raise ParameterError(f"random mining needs at least 2 pairs, got {len(pairs)}")
    pairs = _ordered(pairs)
    n = len(pairs)
    keys = [canonical_text(p.positive) for p in pairs]
    group_of = {k: g for g, k in enumerate(dict.fromkeys(keys))}
    groups = np.array([group_of[k] for k in keys])
    # indices grouped by positive text; each pair's ineligible set is one block
    perm = np.argsort(groups, kind="stable")
    block_start = np.searchsorted(groups[perm], groups, side="left")
    block_size = np.bincount(groups)[groups]

    rng = np.random.default_rng(seed)
    out = []
    for i, p in enumerate(pairs):
        eligible = n - block_size[i]
        if eligible == 0:
            raise ParameterError(f"pair {p.pair_id}: every other positive equals its own")
        r = int(rng.integers(eligible))
        j = perm[r] if r < block_start[i] else perm[r + block_size[i]]
        out.append(TripletRecord(p.sentence, p.positive, pairs[j].positive))
    return out


def _embedding_matrix(pairs: Sequence[PairRecord], attr: str) -> np.ndarray:
    vecs = [getattr(p, attr) for p in pairs]
    missing = [p.pair_id for p, v in zip(pairs, vecs) if v is None]
    if missing:
        raise ParameterError(f"hard mining needs embeddings; missing {attr} for pairs {missing[:10]}")
    mat = np.vstack([np.asarray(v, dtype=np.float64).ravel() for v in vecs])
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ParameterError(f"zero {attr} vector")
    return mat / norms


def hard_candidates(pairs: Sequence[PairRecord], top_n: int = DEFAULT_TOP_N) -> List[np.ndarray]:
    """For each pair (in pair-id order), indices of its top_n eligible positives by cosine.

    Eligible means another pair's positive whose text differs from this
    pair's own positive. Ties in cosine go to the lower index.
    """
    if top_n < 1:
        raise ParameterError(f"top_n must be >= 1, got {top_n}")
    pairs = _ordered(pairs)
    s = _embedding_matrix(pairs, "sentence_embedding")
    pos = _embedding_matrix(pairs, "positive_embedding")
    if s.shape[1] != pos.shape[1]:
        raise ParameterError("sentence and positive embeddings differ in dimension")
    keys = np.array([canonical_text(p.positive) for p in pairs], dtype=object)
    idx = np.arange(len(pairs))
    pools = []
    for i in range(len(pairs)):
        sims = pos @ s[i]
        ok = keys != keys[i]
        cand = idx[ok]
        order = np.lexsort((cand, -sims[ok]))
        pools.append(cand[order[:top_n]])
    return pools


def mine_hard(
    pairs: Sequence[PairRecord],
    top_n: int = DEFAULT_TOP_N,
    rank_to_take: Optional[int] = 1,
    seed: int = 0,
) -> List[TripletRecord]:
    """Hard-negative triplets.

    Args:
        top_n: size of the pool of most similar eligible positives.
        rank_to_take: 1-based position in the pool to use (1 = most
            similar). If the pool is shorter, its last entry is used.
            ``None`` draws uniformly from the pool instead.
        seed: RNG seed for the sampling mode.

    Raises:
        ParameterError: missing embeddings, bad parameters, or a pair
            without any eligible negative.
    """
    if rank_to_take is not None and not 1 <= rank_to_take <= top_n:
        raise ParameterError(f"rank_to_take must be in [1, {top_n}], got {rank_to_take}")
    ordered = _ordered(pairs)
    pools = hard_candidates(ordered, top_n)
    rng = np.random.default_rng(seed)
    out = []
    for p, pool in zip(ordered, pools):
        if pool.size == 0:
            raise ParameterError(f"pair {p.pair_id}: no eligible negative")
        if rank_to_take is None:
            j = pool[int(rng.integers(pool.size))]
        else:
            j = pool[min(rank_to_take, pool.size) - 1]
        out.append(TripletRecord(p.sentence, p.positive, ordered[j].positive))
    return out
