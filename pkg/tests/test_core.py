import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lir.core import (
    ScoredDoc,
    check_token_matrix,
    cosine,
    drop_positions,
    maxsim,
    normalized_maxsim,
    rank_scored,
    score_batched,
)
from lir.errors import DimensionError, EmptyInputError, NotNormalizedError

from conftest import basis, unit_rows


def brute_maxsim(q, d):
    total = 0.0
    for i in range(len(q)):
        best = -math.inf
        for j in range(len(d)):
            s = sum(float(a) * float(b) for a, b in zip(q[i], d[j]))
            best = max(best, s)
        total += best
    return total


class TestCosine:
    def test_identical(self):
        assert cosine(basis(5, [0])[0], basis(5, [0])[0]) == 1.0

    def test_orthogonal(self):
        assert cosine(basis(5, [0])[0], basis(5, [1])[0]) == 0.0

    def test_hand_value(self):
        assert cosine([0.6, 0.8], [0.8, 0.6]) == pytest.approx(0.96, abs=1e-15)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            cosine([1.0, 0.0], [1.0, 0.0, 0.0])


class TestMaxSim:
    def test_single_token(self):
        assert maxsim(basis(4, [0]), basis(4, [0])) == 1.0

    def test_one_match_one_orthogonal(self):
        assert maxsim(basis(4, [0, 1]), basis(4, [0, 2])) == 1.0

    def test_random_against_double_loop(self, rng):
        q, d = unit_rows(rng, 5, 8), unit_rows(rng, 7, 8)
        assert maxsim(q, d) == pytest.approx(brute_maxsim(q, d), abs=1e-12)

    def test_normalized(self, rng):
        assert normalized_maxsim(basis(4, [0]), basis(4, [0])) == 1.0
        assert normalized_maxsim(basis(4, [0, 1]), basis(4, [0, 2])) == 0.5
        q, d = unit_rows(rng, 5, 8), unit_rows(rng, 7, 8)
        assert normalized_maxsim(q, d) == pytest.approx(brute_maxsim(q, d) / 5, abs=1e-12)

    def test_errors(self):
        with pytest.raises(DimensionError):
            maxsim(basis(4, [0]), basis(5, [0]))
        with pytest.raises(EmptyInputError):
            maxsim(np.zeros((0, 4)), basis(4, [0]))
        with pytest.raises(NotNormalizedError):
            maxsim(np.array([[2.0, 0.0]]), np.array([[1.0, 0.0]]))
        with pytest.raises(NotNormalizedError):
            maxsim(np.array([[np.nan, 0.0]]), np.array([[1.0, 0.0]]))

    def test_float32_input_accumulates_in_double(self, rng):
        q, d = unit_rows(rng, 6, 16), unit_rows(rng, 9, 16)
        q32, d32 = q.astype(np.float32), d.astype(np.float32)
        expected = brute_maxsim(q32.astype(np.float64), d32.astype(np.float64))
        assert maxsim(q32, d32) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    dim=st.integers(2, 12),
    q_ids=st.lists(st.integers(0, 11), min_size=1, max_size=10),
    d_ids=st.lists(st.integers(0, 11), min_size=1, max_size=10),
)
def test_keyword_reduction(dim, q_ids, d_ids):
    q_ids = [i % dim for i in q_ids]
    d_ids = [i % dim for i in d_ids]
    expected = sum(1 for t in q_ids if t in set(d_ids))
    assert maxsim(basis(dim, q_ids), basis(dim, d_ids)) == expected


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 8), n=st.integers(1, 8))
def test_permutation_monotonicity_and_bounds(seed, m, n):
    rng = np.random.default_rng(seed)
    q, d = unit_rows(rng, m, 6), unit_rows(rng, n, 6)
    base = maxsim(q, d)
    assert maxsim(q, d[rng.permutation(n)]) == pytest.approx(base, abs=1e-12)
    assert maxsim(q[rng.permutation(m)], d) == pytest.approx(base, abs=1e-12)
    # BLAS may round the same dot product differently for another matrix shape
    assert maxsim(q, np.vstack([d, unit_rows(rng, 1, 6)])) >= base - 1e-12
    assert -m - 1e-9 <= base <= m + 1e-9
    assert -1 - 1e-9 <= normalized_maxsim(q, d) <= 1 + 1e-9


def test_drop_positions():
    m = basis(5, [0, 1, 2, 3])
    np.testing.assert_array_equal(drop_positions(m, [0, -1]), basis(5, [1, 2]))
    np.testing.assert_array_equal(drop_positions(m, []), m)
    np.testing.assert_array_equal(drop_positions(m, [10]), m)
    with pytest.raises(EmptyInputError):
        drop_positions(basis(5, [0]), [0])


def test_check_token_matrix_promotes_vector():
    assert check_token_matrix([1.0, 0.0]).shape == (1, 2)


class TestRankScored:
    def test_order_and_ties(self):
        out = rank_scored([(3, 1.0), (1, 2.0), (2, 1.0), (0, 0.5)], None)
        assert [d.doc_id for d in out] == [1, 2, 3, 0]

    def test_top_k_normalize_min_score(self):
        out = rank_scored([(0, 4.0), (1, 2.0), (2, 1.0)], 2, query_tokens=4)
        assert out == [ScoredDoc(0, 4.0, 1.0), ScoredDoc(1, 2.0, 0.5)]
        out = rank_scored([(0, 4.0), (1, 2.0), (2, 1.0)], None, min_score=1.5)
        assert [d.doc_id for d in out] == [0, 1]


def test_score_batched_invariant(rng):
    q = unit_rows(rng, 4, 8)
    docs = [(i, unit_rows(rng, 3, 8)) for i in range(20)]
    ref = score_batched(q, docs, batch_size=64)
    for bs in (1, 7):
        for workers in (1, 3):
            assert score_batched(q, docs, batch_size=bs, workers=workers) == ref
