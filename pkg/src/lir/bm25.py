"""Okapi BM25 over an in-memory inverted index.

Tokenization is Unicode word segmentation plus lowercasing, with no stemming
or stopword removal. IDF uses the smoothed ``ln(1 + (N - df + 0.5) / (df + 0.5))``
so it is positive for every term.
"""

from __future__ import annotations

import math
import re
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .core import ScoredDoc, rank_scored
from .errors import EmptyInputError, ParameterError

K1 = 1.2
B = 0.75

_WORD = re.compile(r"\w+", re.UNICODE)


def tokenize(text: str) -> List[str]:
    return _WORD.findall(unicodedata.normalize("NFC", text).lower())


@dataclass
class Bm25Index:
    doc_freq: Dict[str, int]
    postings: Dict[str, List[Tuple[int, int]]]
    doc_lengths: np.ndarray
    avg_doc_length: float
    num_docs: int
    k1: float = K1
    b: float = B

    def idf(self, term: str) -> float:
        df = self.doc_freq.get(term, 0)
        return math.log(1.0 + (self.num_docs - df + 0.5) / (df + 0.5))


def bm25_build(docs: Sequence[str], k1: float = K1, b: float = B) -> Bm25Index:
    """Index a corpus; document ids are positions in ``docs``.

    Raises:
        EmptyInputError: empty corpus.
    """
    if len(docs) == 0:
        raise EmptyInputError("cannot index an empty corpus")
    if k1 < 0 or not 0 <= b <= 1:
        raise ParameterError(f"need k1 >= 0 and 0 <= b <= 1, got k1={k1}, b={b}")
    postings: Dict[str, List[Tuple[int, int]]] = defaultdict(list)
    lengths = np.zeros(len(docs), dtype=np.int64)
    for doc_id, text in enumerate(docs):
        tokens = tokenize(text)
        lengths[doc_id] = len(tokens)
        for term, tf in Counter(tokens).items():
            postings[term].append((doc_id, tf))
    postings = dict(postings)
    doc_freq = {t: len(p) for t, p in postings.items()}
    return Bm25Index(doc_freq, postings, lengths, float(lengths.mean()), len(docs), k1, b)


def bm25_scores(index: Bm25Index, query: str) -> Dict[int, float]:
    """Scores of every document sharing at least one term with the query.

    Repeated query terms contribute once per occurrence.
    """
    k1, b = index.k1, index.b
    avgdl = index.avg_doc_length or 1.0
    scores: Dict[int, float] = defaultdict(float)
    for term in tokenize(query):
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for doc_id, tf in plist:
            norm = k1 * (1.0 - b + b * index.doc_lengths[doc_id] / avgdl)
            scores[doc_id] += idf * tf * (k1 + 1.0) / (tf + norm)
    return dict(scores)


def bm25_search(index: Bm25Index, query: str, top_k: int = 10) -> List[ScoredDoc]:
    """Top documents by BM25, ties by ascending id. Empty when no query term is known."""
    scores = bm25_scores(index, query)
    return rank_scored(list(scores.items()), top_k)
