"""Token matrices and the MaxSim scoring kernel.

A token matrix is a 2-D numpy array with one unit-norm embedding per row.
Storage may be float32 or float64; all similarity arithmetic happens in
float64 and per-query sums use :func:`math.fsum`, so a score does not depend
on the order of query or document rows.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionError, EmptyInputError, NotNormalizedError, ParameterError

NORM_TOL = 1e-6


@dataclass(frozen=True)
class ScoredDoc:
    """A ranked document.

    ``normalized_score`` is ``score / m`` (m = query token count) when the
    caller asked for normalization, else ``None``.
    """

    doc_id: int
    score: float
    normalized_score: Optional[float] = None


def check_token_matrix(values, name: str = "matrix", check_norm: bool = True) -> np.ndarray:
    """Validate a token matrix and return it as a 2-D float array.

    Raises:
        EmptyInputError: no rows or zero dimension.
        NotNormalizedError: non-finite values, or a row outside unit norm.
    """
    arr = np.asarray(values)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-D matrix, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise EmptyInputError(f"{name}: empty token matrix of shape {arr.shape}")
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise NotNormalizedError(f"{name}: non-finite values")
    if check_norm:
        norms = np.linalg.norm(arr.astype(np.float64, copy=False), axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
        if bad.size:
            raise NotNormalizedError(
                f"{name}: row {int(bad[0])} has L2 norm {norms[bad[0]]!r}, expected 1 +/- {NORM_TOL}"
            )
    return arr


def normalize_rows(values) -> np.ndarray:
    """Scale each row to unit L2 norm (float64). Zero rows raise NotNormalizedError."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise NotNormalizedError("cannot normalize zero or non-finite row")
    return arr / norms


def drop_positions(matrix: np.ndarray, positions: Iterable[int]) -> np.ndarray:
    """Remove the listed token positions (negative indices count from the end).

    Positions beyond the matrix are ignored so one skip-list can serve texts of
    different lengths.
    """
    positions = list(positions)
    if not positions:
        return matrix
    n = matrix.shape[0]
    drop = {p % n for p in positions if -n <= p < n}
    keep = [i for i in range(n) if i not in drop]
    if not keep:
        raise EmptyInputError("skip-list removed every token")
    return matrix[keep]


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def cosine(a, b) -> float:
    """Dot product of two unit-norm vectors, which equals their cosine."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    _check_dims(a, b)
    return float(np.dot(a, b))


def similarity_matrix(query: np.ndarray, doc: np.ndarray) -> np.ndarray:
    """All pairwise cosines, shape (m, n), in float64."""
    return np.asarray(query, dtype=np.float64) @ np.asarray(doc, dtype=np.float64).T


def maxsim_unchecked(query: np.ndarray, doc: np.ndarray) -> float:
    """MaxSim without validation. Every scoring path in the package goes through here."""
    best = similarity_matrix(query, doc).max(axis=1)
    return math.fsum(best.tolist())


def maxsim(query, doc) -> float:
    """Sum over query tokens of the best cosine against any document token.

    Raises:
        DimensionError: query and document dims differ.
        EmptyInputError: either matrix has no rows.
        NotNormalizedError: a row is not unit-norm.
    """
    q = check_token_matrix(query, "query")
    d = check_token_matrix(doc, "doc")
    _check_dims(q, d)
    return maxsim_unchecked(q, d)


def normalized_maxsim(query, doc) -> float:
    """MaxSim divided by the number of query tokens; lies in [-1, 1]."""
    q = check_token_matrix(query, "query")
    return maxsim(q, doc) / q.shape[0]


def rank_scored(
    scored: Sequence[Tuple[int, float]],
    top_k: Optional[int],
    query_tokens: Optional[int] = None,
    min_score: Optional[float] = None,
) -> List[ScoredDoc]:
    """Sort (doc_id, score) pairs by score descending, ties by ascending id.

    Args:
        scored: unsorted pairs.
        top_k: keep at most this many (None keeps all).
        query_tokens: if given, fill ``normalized_score = score / query_tokens``.
        min_score: drop results whose reported score (normalized when
            normalizing) is below this threshold.
    """
    ordered = sorted(scored, key=lambda p: (-p[1], p[0]))
    out: List[ScoredDoc] = []
    for doc_id, score in ordered:
        norm = score / query_tokens if query_tokens else None
        reported = norm if norm is not None else score
        if min_score is not None and reported < min_score:
            continue
        out.append(ScoredDoc(int(doc_id), float(score), norm))
        if top_k is not None and len(out) >= top_k:
            break
    return out


def score_batched(
    query: np.ndarray,
    docs: Sequence[Tuple[int, np.ndarray]],
    batch_size: int = 64,
    workers: int = 1,
) -> List[Tuple[int, float]]:
    """MaxSim of ``query`` against each (doc_id, matrix), in input order.

    Documents are split into batches of ``batch_size``; with ``workers > 1``
    batches run on a thread pool. Each document is scored by the same kernel
    regardless of batching, so results do not depend on either knob.
    """
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    q = np.asarray(query, dtype=np.float64)
    batches = [docs[i : i + batch_size] for i in range(0, len(docs), batch_size)]

    def run(batch):
        return [(doc_id, maxsim_unchecked(q, mat)) for doc_id, mat in batch]

    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, batches))
    else:
        parts = [run(b) for b in batches]
    return [pair for part in parts for pair in part]
