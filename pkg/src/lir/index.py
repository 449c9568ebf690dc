"""Corpus-wide token store, flat and IVF token indexes, and the LIRX file format.

Every document's token rows are concatenated into one ``(N, dim)`` float32
matrix. ``token_to_doc[r]`` names the document owning row ``r`` and
``doc_offsets`` holds the prefix sums of document lengths, so document ``i``
owns rows ``doc_offsets[i]:doc_offsets[i + 1]``.

LIRX layout (all integers little-endian)::

    offset  size            field
    0       4               magic "LIRX"
    4       2   u16         version (1)
    6       1   u8          kind (0 flat, 1 IVF)
    7       1   u8          pad (0)
    8       4   u32         dim
    12      8   u64         numDocs
    20      8   u64         numTokens
    28      8*(numDocs+1)   docOffsets (u64)
    ...     8*numTokens     tokenToDoc (u64)
    ...     4*numTokens*dim vectors (f32, row-major)
    IVF only:
    ...     4   u32         k
    ...     4*k*dim         centroids (f32, row-major)
    ...     4*numTokens     cell assignment (u32)
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from . import kmeans as _kmeans
from .core import NORM_TOL, check_token_matrix
from ._binary import Reader as _Reader
from .errors import (
    DimensionError,
    EmptyInputError,
    FormatError,
    MissingDocumentError,
    ParameterError,
)

MAGIC = b"LIRX"
VERSION = 1
KIND_FLAT = 0
KIND_IVF = 1
DEFAULT_K_PRIME = 100

_HEADER = struct.Struct("<4sHBBIQQ")


@dataclass
class EmbeddingStore:
    vectors: np.ndarray  # (N, dim) float32, unit-norm rows
    token_to_doc: np.ndarray  # (N,) int64
    doc_offsets: np.ndarray  # (numDocs + 1,) int64

    @property
    def num_docs(self) -> int:
        return len(self.doc_offsets) - 1

    @property
    def num_tokens(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def doc(self, doc_id: int) -> np.ndarray:
        """Token matrix of one document (a view into ``vectors``)."""
        if not 0 <= doc_id < self.num_docs:
            raise MissingDocumentError(doc_id, self.num_docs)
        return self.vectors[self.doc_offsets[doc_id] : self.doc_offsets[doc_id + 1]]

    def validate(self) -> None:
        """Check the map/offset invariants; raises ValueError on violation."""
        offs = self.doc_offsets
        if offs.ndim != 1 or offs.size < 2:
            raise ValueError("doc_offsets must list numDocs + 1 >= 2 entries")
        if offs[0] != 0 or offs[-1] != self.num_tokens:
            raise ValueError("doc_offsets must start at 0 and end at numTokens")
        if np.any(np.diff(offs) <= 0):
            raise ValueError("doc_offsets must be strictly increasing")
        expected = np.repeat(np.arange(self.num_docs, dtype=np.int64), np.diff(offs))
        if not np.array_equal(self.token_to_doc, expected):
            raise ValueError("token_to_doc disagrees with doc_offsets")


def build_store(docs: Sequence) -> EmbeddingStore:
    """Concatenate per-document token matrices into a store.

    Raises:
        EmptyInputError: no documents, or a document without tokens.
        DimensionError: documents disagree on dim.
    """
    if len(docs) == 0:
        raise EmptyInputError("cannot build a store from zero documents")
    mats = [check_token_matrix(d, f"doc {i}") for i, d in enumerate(docs)]
    dim = mats[0].shape[1]
    for i, m in enumerate(mats):
        if m.shape[1] != dim:
            raise DimensionError(f"doc {i} has dim {m.shape[1]}, expected {dim}")
    lengths = np.array([m.shape[0] for m in mats], dtype=np.int64)
    offsets = np.zeros(len(mats) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    vectors = np.ascontiguousarray(np.concatenate(mats, axis=0), dtype=np.float32)
    token_to_doc = np.repeat(np.arange(len(mats), dtype=np.int64), lengths)
    return EmbeddingStore(vectors, token_to_doc, offsets)


@dataclass
class TokenSearchResult:
    """Per query token: the top-k' corpus rows (``ids``, the I matrix) and their
    cosines (``sims``, the D matrix), each row sorted by similarity descending.

    IVF probes can reach fewer than k' rows; missing slots hold id -1 and
    similarity -inf, and ``counts`` gives the number of valid slots per row.
    ``truncated`` is set when k' exceeded the number of searchable rows.
    """

    ids: np.ndarray
    sims: np.ndarray
    counts: np.ndarray
    truncated: bool = False

    @property
    def shape(self):
        return self.ids.shape


def top_k(scores: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k best scores, ordered by score descending then id ascending."""
    n = scores.shape[0]
    if k < n:
        part = np.argpartition(-scores, k - 1)[:k]
        keep = np.flatnonzero(scores >= scores[part].min())
    else:
        keep = np.arange(n)
    order = np.lexsort((ids[keep], -scores[keep]))
    return keep[order[:k]]


@dataclass
class TokenIndex:
    """Searchable structure over a store's token rows.

    ``kind`` is ``"flat"`` (exact scan) or ``"ivf"``. For IVF, ``centroids``
    holds the k cell centres (float32) and ``assignment`` the cell of every
    token row; ``nprobe`` is the default number of cells searched.
    """

    kind: str
    store: EmbeddingStore
    centroids: Optional[np.ndarray] = None
    assignment: Optional[np.ndarray] = None
    nprobe: int = 1
    _vectors64: np.ndarray = field(init=False, repr=False)
    _cell_rows: np.ndarray = field(init=False, repr=False, default=None)
    _cell_offsets: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self._vectors64 = self.store.vectors.astype(np.float64)
        if self.kind == "ivf":
            k = self.centroids.shape[0]
            if not 1 <= self.nprobe <= k:
                raise ParameterError(f"nprobe must be in [1, {k}], got {self.nprobe}")
            self._cell_rows = np.argsort(self.assignment, kind="stable").astype(np.int64)
            counts = np.bincount(self.assignment, minlength=k)
            self._cell_offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        elif self.kind != "flat":
            raise ParameterError(f"unknown index kind {self.kind!r}")

    @property
    def num_cells(self) -> int:
        return 0 if self.centroids is None else self.centroids.shape[0]

    def posting_list(self, cell: int) -> np.ndarray:
        """Token row ids assigned to one IVF cell, ascending."""
        return self._cell_rows[self._cell_offsets[cell] : self._cell_offsets[cell + 1]]

    def probe_order(self, token: np.ndarray) -> np.ndarray:
        """Cells ordered by distance to ``token``, ties to the lower cell id."""
        d = _kmeans.squared_distances(token.reshape(1, -1), self.centroids).ravel()
        return np.lexsort((np.arange(d.size), d))


def build_flat(store: EmbeddingStore) -> TokenIndex:
    return TokenIndex("flat", store)


def build_ivf(store: EmbeddingStore, num_cells: int, seed: int, nprobe: int = 1) -> TokenIndex:
    """Coarse-quantized index: k-means over all token rows, one posting list per cell.

    Raises:
        ParameterError: ``num_cells`` outside ``[1, numTokens]``.
    """
    if not 1 <= num_cells <= store.num_tokens:
        raise ParameterError(
            f"number of cells must be in [1, {store.num_tokens}], got {num_cells}"
        )
    centroids, _ = _kmeans.kmeans(store.vectors, num_cells, seed)
    # Assign against the float32 centroids that get persisted, so a loaded
    # index is consistent with its own centroids.
    centroids = centroids.astype(np.float32)
    assignment = _kmeans.assign(store.vectors, centroids).astype(np.uint32)
    return TokenIndex("ivf", store, centroids, assignment, nprobe=min(nprobe, num_cells))


def search_tokens(
    index: TokenIndex, query, k_prime: int = DEFAULT_K_PRIME, nprobe: Optional[int] = None
) -> TokenSearchResult:
    """Top-k' corpus token rows for every query token.

    Ties in similarity go to the lower row id. A flat index with k' > N
    returns all N rows and sets ``truncated``.

    Raises:
        EmptyInputError: query has no tokens.
        DimensionError: query dim differs from the index.
        ParameterError: k' < 1 or nprobe out of range.
    """
    q = check_token_matrix(query, "query")
    if q.shape[1] != index.store.dim:
        raise DimensionError(f"query dim {q.shape[1]} != index dim {index.store.dim}")
    if k_prime < 1:
        raise ParameterError(f"k' must be >= 1, got {k_prime}")
    n = index.store.num_tokens
    width = min(k_prime, n)
    truncated = k_prime > n
    m = q.shape[0]
    ids = np.full((m, width), -1, dtype=np.int64)
    sims = np.full((m, width), -np.inf, dtype=np.float64)
    counts = np.zeros(m, dtype=np.int64)
    q64 = q.astype(np.float64)

    if index.kind == "flat":
        all_rows = np.arange(n, dtype=np.int64)
        for i in range(m):
            s = index._vectors64 @ q64[i]
            pos = top_k(s, all_rows, width)
            ids[i], sims[i], counts[i] = pos, s[pos], width
    else:
        probe = index.nprobe if nprobe is None else nprobe
        if not 1 <= probe <= index.num_cells:
            raise ParameterError(f"nprobe must be in [1, {index.num_cells}], got {probe}")
        for i in range(m):
            cells = index.probe_order(q64[i])[:probe]
            rows = np.sort(np.concatenate([index.posting_list(c) for c in cells]))
            if rows.size == 0:
                continue
            s = index._vectors64[rows] @ q64[i]
            pos = top_k(s, rows, width)
            c = pos.size
            ids[i, :c], sims[i, :c], counts[i] = rows[pos], s[pos], c
    return TokenSearchResult(ids, sims, counts, truncated)


# --------------------------------------------------------------------------
# persistence


def save_index(index: TokenIndex, path: Union[str, os.PathLike]) -> None:
    store = index.store
    kind = KIND_FLAT if index.kind == "flat" else KIND_IVF
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, kind, 0, store.dim, store.num_docs, store.num_tokens))
        fh.write(store.doc_offsets.astype("<u8").tobytes())
        fh.write(store.token_to_doc.astype("<u8").tobytes())
        fh.write(np.ascontiguousarray(store.vectors, dtype="<f4").tobytes())
        if kind == KIND_IVF:
            fh.write(struct.pack("<I", index.num_cells))
            fh.write(np.ascontiguousarray(index.centroids, dtype="<f4").tobytes())
            fh.write(index.assignment.astype("<u4").tobytes())


def load_index(path: Union[str, os.PathLike], nprobe: int = 1) -> TokenIndex:
    """Read a LIRX file.

    Raises:
        FormatError: bad magic/version/kind, truncation, trailing bytes, or
            inconsistent maps; the message carries the byte offset.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    magic, version, kind, _pad, dim, num_docs, num_tokens = r.unpack(_HEADER, "header")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version: expected {VERSION}, got {version}", 4)
    if kind not in (KIND_FLAT, KIND_IVF):
        raise FormatError(f"unknown index kind {kind}", 6)
    if dim == 0 or num_docs == 0 or num_tokens == 0:
        raise FormatError("dim, numDocs and numTokens must be positive", 8)
    offsets_at = r.pos
    doc_offsets = r.array("<u8", num_docs + 1, "docOffsets").astype(np.int64)
    map_at = r.pos
    token_to_doc = r.array("<u8", num_tokens, "tokenToDoc").astype(np.int64)
    vectors_at = r.pos
    vectors = r.array("<f4", num_tokens * dim, "vectors").reshape(num_tokens, dim).astype(np.float32)

    store = EmbeddingStore(vectors, token_to_doc, doc_offsets)
    try:
        store.validate()
    except ValueError as exc:
        at = map_at if "token_to_doc" in str(exc) else offsets_at
        raise FormatError(str(exc), at) from None
    if not np.all(np.isfinite(vectors)):
        raise FormatError("non-finite vector values", vectors_at)
    norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
    if bad.size:
        raise FormatError(f"vector row {int(bad[0])} is not unit-norm", vectors_at + 4 * dim * int(bad[0]))

    if kind == KIND_FLAT:
        index = TokenIndex("flat", store)
    else:
        cells_at = r.pos
        (k,) = r.unpack(struct.Struct("<I"), "cell count")
        if not 1 <= k <= num_tokens:
            raise FormatError(f"cell count {k} outside [1, {num_tokens}]", cells_at)
        centroids = r.array("<f4", k * dim, "centroids").reshape(k, dim).astype(np.float32)
        assign_at = r.pos
        assignment = r.array("<u4", num_tokens, "cell assignment").astype(np.uint32)
        if assignment.size and int(assignment.max()) >= k:
            raise FormatError(f"cell assignment references cell >= {k}", assign_at)
        index = TokenIndex("ivf", store, centroids, assignment, nprobe=min(nprobe, k))
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after payload", r.pos)
    return index


def inspect_index(index: TokenIndex) -> List[str]:
    """Human-readable summary lines."""
    s = index.store
    lines = [
        f"kind\t{index.kind}",
        f"dim\t{s.dim}",
        f"num_docs\t{s.num_docs}",
        f"num_tokens\t{s.num_tokens}",
    ]
    if index.kind == "ivf":
        sizes = np.diff(index._cell_offsets)
        lines += [
            f"cells\t{index.num_cells}",
            f"cell_size_min\t{int(sizes.min())}",
            f"cell_size_max\t{int(sizes.max())}",
        ]
    return lines
