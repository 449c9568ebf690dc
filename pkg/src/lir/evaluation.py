"""Recall@k / NDCG@k over TREC-style runs, and the three evaluation pipelines.

Averages are macro over queries. Queries with no relevant document
(grade > 0) are left out of the average and listed in ``excluded``; they
are not counted as zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .bm25 import Bm25Index, bm25_scores
from .core import check_token_matrix, drop_positions, rank_scored
from .errors import DataConsistencyError, ParameterError
from .index import TokenIndex
from .rerank import rerank_preindexed
from .retrieval import RetrievalParams, retrieve

log = logging.getLogger(__name__)

CUTOFFS = (1, 5, 10, 20, 50)
MODES = ("retrieve", "bm25", "bm25-then-rerank")

Qrels = Dict[str, Dict[int, int]]
Run = Dict[str, List[Tuple[int, float]]]


@dataclass
class MetricResult:
    per_query: Dict[str, float]
    mean: float
    excluded: List[str] = field(default_factory=list)


def _check_run_queries(run: Mapping, qrels: Mapping) -> None:
    missing = [q for q in run if q not in qrels]
    if missing:
        raise DataConsistencyError("run queries absent from qrels", missing)


def _finish(per_query: Dict[str, float], excluded: List[str], name: str) -> MetricResult:
    if excluded:
        log.warning("%s: %d queries without relevant documents excluded: %s",
                    name, len(excluded), ", ".join(excluded[:10]))
    mean = math.fsum(per_query.values()) / len(per_query) if per_query else float("nan")
    return MetricResult(per_query, mean, excluded)


def recall_at_k(run: Run, qrels: Qrels, k: int) -> MetricResult:
    """|relevant in top k| / |relevant| per query, relevant meaning grade > 0."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    _check_run_queries(run, qrels)
    per_query, excluded = {}, []
    for qid, ranked in run.items():
        relevant = {d for d, g in qrels[qid].items() if g > 0}
        if not relevant:
            excluded.append(qid)
            continue
        top = {d for d, _ in ranked[:k]}
        per_query[qid] = len(relevant & top) / len(relevant)
    return _finish(per_query, excluded, f"recall@{k}")


def dcg(gains: Sequence[int]) -> float:
    return math.fsum((2.0 ** g - 1.0) / math.log2(i + 2) for i, g in enumerate(gains))


def ndcg_at_k(run: Run, qrels: Qrels, k: int) -> MetricResult:
    """Exponential-gain NDCG: sum of (2^grade - 1) / log2(rank + 1) over the top k,
    divided by the same sum for the ideal ordering of all judged grades."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    _check_run_queries(run, qrels)
    per_query, excluded = {}, []
    for qid, ranked in run.items():
        grades = qrels[qid]
        ideal = dcg(sorted(grades.values(), reverse=True)[:k])
        if ideal == 0.0:
            excluded.append(qid)
            continue
        per_query[qid] = dcg([grades.get(d, 0) for d, _ in ranked[:k]]) / ideal
    return _finish(per_query, excluded, f"ndcg@{k}")


@dataclass
class MetricsTable:
    """Recall and NDCG means at each cutoff, plus the run they came from."""

    cutoffs: Tuple[int, ...]
    recall: Dict[int, float]
    ndcg: Dict[int, float]
    run: Run
    excluded: List[str] = field(default_factory=list)

    def format(self, digits: int = 4) -> str:
        header = "metric\t" + "\t".join(f"@{k}" for k in self.cutoffs)
        rows = [header]
        for name, values in (("Recall", self.recall), ("NDCG", self.ndcg)):
            rows.append(name + "\t" + "\t".join(f"{values[k]:.{digits}f}" for k in self.cutoffs))
        return "\n".join(rows) + "\n"


def evaluate_run(run: Run, qrels: Qrels, cutoffs: Sequence[int] = CUTOFFS) -> MetricsTable:
    recall, ndcg, excluded = {}, {}, set()
    for k in cutoffs:
        r = recall_at_k(run, qrels, k)
        n = ndcg_at_k(run, qrels, k)
        recall[k], ndcg[k] = r.mean, n.mean
        excluded.update(r.excluded, n.excluded)
    return MetricsTable(tuple(cutoffs), recall, ndcg, run, sorted(excluded))


def bm25_candidate_pool(index: Bm25Index, query: str, size: int) -> List[int]:
    """Top ``size`` documents by BM25.

    Documents sharing no term with the query score 0 and fill any remaining
    slots in ascending id order, so ``size >= numDocs`` yields the whole corpus.
    """
    ranked = [d.doc_id for d in rank_scored(list(bm25_scores(index, query).items()), size)]
    if len(ranked) < size:
        seen = set(ranked)
        for d in range(index.num_docs):
            if len(ranked) >= size:
                break
            if d not in seen:
                ranked.append(d)
    return ranked


def _check_ids(qrels: Qrels, qids: Sequence[str], num_docs: int) -> None:
    no_qrels = [q for q in qids if q not in qrels]
    if no_qrels:
        raise DataConsistencyError("queries without qrels", no_qrels)
    bad_docs = sorted({f"{q}:{d}" for q in qids for d in qrels[q] if not 0 <= d < num_docs})
    if bad_docs:
        raise DataConsistencyError(f"qrels reference documents outside 0..{num_docs - 1}", bad_docs)


def evaluate_pipeline(
    mode: str,
    qrels: Qrels,
    *,
    index: Optional[TokenIndex] = None,
    query_embeddings: Optional[Mapping[str, np.ndarray]] = None,
    bm25_index: Optional[Bm25Index] = None,
    query_texts: Optional[Mapping[str, str]] = None,
    params: RetrievalParams = RetrievalParams(),
    candidates: int = 100,
    cutoffs: Sequence[int] = CUTOFFS,
) -> MetricsTable:
    """Run one pipeline over all queries and tabulate Recall/NDCG at ``cutoffs``.

    Modes:
        retrieve: token-index retrieval (needs ``index``, ``query_embeddings``).
        bm25: BM25 ranking (needs ``bm25_index``, ``query_texts``).
        bm25-then-rerank: BM25 top ``candidates`` re-ranked by MaxSim from the
            index's store (needs all four).

    Raises:
        DataConsistencyError: queries lack qrels, qrels name unknown
            documents, or the query sets / corpora of the inputs disagree.
    """
    if mode not in MODES:
        raise ParameterError(f"unknown mode {mode!r}; expected one of {MODES}")
    depth = max(cutoffs)
    needs_emb = mode in ("retrieve", "bm25-then-rerank")
    needs_text = mode in ("bm25", "bm25-then-rerank")
    if needs_emb and (index is None or query_embeddings is None):
        raise ParameterError(f"mode {mode} needs a token index and query embeddings")
    if needs_text and (bm25_index is None or query_texts is None):
        raise ParameterError(f"mode {mode} needs a BM25 index and query texts")

    qids = list(query_embeddings if needs_emb else query_texts)
    if needs_emb and needs_text:
        diff = sorted(set(query_embeddings) ^ set(query_texts))
        if diff:
            raise DataConsistencyError("query ids differ between embeddings and texts", diff)
        if bm25_index.num_docs != index.store.num_docs:
            raise DataConsistencyError(
                f"BM25 corpus has {bm25_index.num_docs} documents, store has {index.store.num_docs}"
            )
    num_docs = index.store.num_docs if needs_emb else bm25_index.num_docs
    _check_ids(qrels, qids, num_docs)

    run: Run = {}
    for qid in qids:
        if mode == "retrieve":
            p = RetrievalParams(
                k_prime=params.k_prime, top_k=depth, nprobe=params.nprobe,
                skip_positions=params.skip_positions, batch_size=params.batch_size,
                workers=params.workers,
            )
            ranked = retrieve(index, query_embeddings[qid], p)
        elif mode == "bm25":
            ranked = rank_scored(list(bm25_scores(bm25_index, query_texts[qid]).items()), depth)
        else:
            pool = bm25_candidate_pool(bm25_index, query_texts[qid], candidates)
            query = drop_positions(check_token_matrix(query_embeddings[qid], "query"),
                                   params.skip_positions)
            ranked = rerank_preindexed(
                index.store, query, pool, depth,
                batch_size=params.batch_size, workers=params.workers,
            )
        run[qid] = [(d.doc_id, d.score) for d in ranked]
    return evaluate_run(run, qrels, cutoffs)
