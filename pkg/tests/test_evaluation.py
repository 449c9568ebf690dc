import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lir.bm25 import bm25_build
from lir.errors import DataConsistencyError, ParameterError
from lir.evaluation import (
    CUTOFFS,
    bm25_candidate_pool,
    evaluate_pipeline,
    evaluate_run,
    ndcg_at_k,
    recall_at_k,
)
from lir.index import build_flat, build_store
from lir.retrieval import RetrievalParams

from conftest import basis


def ref_ndcg(ranked, grades, k):
    gains = np.array([grades.get(d, 0) for d in ranked[:k]], dtype=float)
    disc = 1.0 / np.log2(np.arange(2, gains.size + 2))
    dcg = float(((2 ** gains - 1) * disc).sum())
    ideal = np.sort(np.array(list(grades.values()), dtype=float))[::-1][:k]
    idcg = float(((2 ** ideal - 1) / np.log2(np.arange(2, ideal.size + 2))).sum())
    return dcg / idcg


def random_instance(rng, queries=20, docs=30, graded=False):
    run, qrels = {}, {}
    for q in range(queries):
        order = rng.permutation(docs)[: int(rng.integers(5, docs))]
        run[str(q)] = [(int(d), float(len(order) - i)) for i, d in enumerate(order)]
        judged = rng.choice(docs, int(rng.integers(1, 8)), replace=False)
        qrels[str(q)] = {int(d): int(rng.integers(1, 4)) if graded else 1 for d in judged}
    return run, qrels


class TestRecall:
    def test_all_found(self):
        assert recall_at_k({"q": [(1, 2.0), (2, 1.0)]}, {"q": {1: 1, 2: 1}}, 2).mean == 1.0

    def test_quarter(self):
        run = {"q": [(1, 3.0), (9, 2.0), (8, 1.0)]}
        assert recall_at_k(run, {"q": {1: 1, 2: 1, 3: 1, 4: 1}}, 3).mean == 0.25

    def test_hand_loop_oracle(self, rng):
        run, qrels = random_instance(rng)
        for k in (1, 5, 10):
            vals = []
            for q, ranked in run.items():
                rel = [d for d, g in qrels[q].items() if g > 0]
                hits = 0
                for d, _ in ranked[:k]:
                    if d in rel:
                        hits += 1
                vals.append(hits / len(rel))
            assert recall_at_k(run, qrels, k).mean == pytest.approx(sum(vals) / len(vals), abs=1e-12)

    def test_excluded_queries(self):
        res = recall_at_k({"a": [(1, 1.0)], "b": [(1, 1.0)]}, {"a": {1: 1}, "b": {1: 0}}, 1)
        assert res.excluded == ["b"] and res.mean == 1.0

    def test_missing_from_qrels(self):
        with pytest.raises(DataConsistencyError, match="zz"):
            recall_at_k({"zz": [(1, 1.0)]}, {"a": {1: 1}}, 1)

    def test_bad_k(self):
        with pytest.raises(ParameterError):
            recall_at_k({}, {}, 0)


class TestNdcg:
    def test_perfect(self):
        assert ndcg_at_k({"q": [(1, 2.0), (2, 1.0), (3, 0.5)]}, {"q": {1: 1, 2: 1}}, 3).mean == 1.0

    def test_single_relevant_at_rank_two(self):
        res = ndcg_at_k({"q": [(5, 2.0), (1, 1.0)]}, {"q": {1: 1}}, 2)
        assert res.mean == pytest.approx(1 / math.log2(3), abs=1e-12)
        assert res.mean == pytest.approx(0.6309, abs=1e-4)

    def test_graded_reference(self, rng):
        run, qrels = random_instance(rng, graded=True)
        for k in (1, 5, 10, 20):
            want = np.mean([ref_ndcg([d for d, _ in run[q]], qrels[q], k) for q in run])
            assert ndcg_at_k(run, qrels, k).mean == pytest.approx(want, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_metric_properties(seed):
    rng = np.random.default_rng(seed)
    run, qrels = random_instance(rng, queries=5, graded=True)
    prev = {q: -1.0 for q in run}
    for k in range(1, 31):
        r = recall_at_k(run, qrels, k).per_query
        for q in run:
            assert r[q] >= prev[q]
            prev[q] = r[q]
        n = ndcg_at_k(run, qrels, k).per_query
        assert all(-1e-12 <= v <= 1 + 1e-12 for v in n.values())
    # reorder lines within a query without changing ranks
    shuffled = {q: list(v) for q, v in reversed(list(run.items()))}
    assert evaluate_run(shuffled, qrels).recall == evaluate_run(run, qrels).recall


def test_run_as_own_qrels():
    run = {"q": [(d, 10.0 - d) for d in range(10)]}
    qrels = {"q": {d: 1 for d in range(5)}}
    assert recall_at_k(run, qrels, 5).mean == 1.0
    assert ndcg_at_k(run, qrels, 5).mean == 1.0


def test_table_cutoffs_and_format():
    table = evaluate_run({"q": [(1, 1.0)]}, {"q": {1: 1}})
    assert table.cutoffs == (1, 5, 10, 20, 50) == CUTOFFS
    lines = table.format().splitlines()
    assert lines[0] == "metric\t@1\t@5\t@10\t@20\t@50"
    assert lines[1].startswith("Recall\t1.0000")
    assert lines[2].startswith("NDCG\t")


def test_bm25_pool_fills_with_zero_score_docs():
    idx = bm25_build(["a", "b", "a c", "d"])
    assert bm25_candidate_pool(idx, "a", 10) == [0, 2, 1, 3]
    assert bm25_candidate_pool(idx, "a", 3) == [0, 2, 1]


def keyword_benchmark(num_docs=40, dim=64, seed=0):
    """Docs and queries of basis tokens named w<i>; texts mirror the tokens."""
    rng = np.random.default_rng(seed)
    doc_tokens = [rng.choice(dim, int(rng.integers(3, 8)), replace=False) for _ in range(num_docs)]
    docs = [basis(dim, t) for t in doc_tokens]
    texts = [" ".join(f"w{t}" for t in toks) for toks in doc_tokens]
    queries, qtexts, qrels = {}, {}, {}
    for q in range(10):
        target = int(rng.integers(num_docs))
        toks = doc_tokens[target]
        queries[str(q)] = basis(dim, toks)
        qtexts[str(q)] = " ".join(f"w{t}" for t in toks)
        qrels[str(q)] = {target: 1}
    return docs, texts, queries, qtexts, qrels


class TestPipelines:
    def test_modes_and_parity(self):
        docs, texts, queries, qtexts, qrels = keyword_benchmark()
        store = build_store(docs)
        index = build_flat(store)
        bm = bm25_build(texts)
        params = RetrievalParams(k_prime=store.num_tokens)
        ret = evaluate_pipeline("retrieve", qrels, index=index, query_embeddings=queries, params=params)
        rr = evaluate_pipeline(
            "bm25-then-rerank", qrels, index=index, query_embeddings=queries, bm25_index=bm,
            query_texts=qtexts, params=params, candidates=store.num_docs,
        )
        assert ret.recall == rr.recall and ret.ndcg == rr.ndcg
        assert ret.run == rr.run
        assert ret.recall[1] == 1.0
        b = evaluate_pipeline("bm25", qrels, bm25_index=bm, query_texts=qtexts)
        assert b.cutoffs == CUTOFFS

    def test_consistency_errors(self):
        docs, texts, queries, qtexts, qrels = keyword_benchmark()
        index = build_flat(build_store(docs))
        with pytest.raises(DataConsistencyError):
            evaluate_pipeline("retrieve", {"0": {999: 1}}, index=index, query_embeddings={"0": queries["0"]})
        with pytest.raises(DataConsistencyError):
            evaluate_pipeline("retrieve", {}, index=index, query_embeddings=queries)
        with pytest.raises(DataConsistencyError):
            evaluate_pipeline("bm25-then-rerank", qrels, index=index, query_embeddings=queries,
                              bm25_index=bm25_build(texts[:-1]), query_texts=qtexts)
        with pytest.raises(ParameterError):
            evaluate_pipeline("nope", qrels)
