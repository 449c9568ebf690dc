"""Readers and writers for every file the package consumes or produces.

Binary token embeddings (LEMB) are the boundary with the external encoder.
Text formats are UTF-8 with ``\\n`` line endings:

* corpus / queries: JSONL, one object per line with an integer id field
  (``doc_id`` or ``query_id``) and ``text``.
* qrels: TREC ``qid 0 docid grade``.
* runs: TREC ``qid Q0 docid rank score tag``, written tab-separated with
  six-decimal scores.
* pairs: TSV with header ``pair_id sentence positive``.
* triplets: TSV with header ``sentence positive negative``.

Readers reject malformed input rather than repairing it and report line
numbers (text) or byte offsets (binary).
"""

from __future__ import annotations

import io
import json
import os
import struct
import unicodedata
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from ._binary import Reader
from .core import NORM_TOL, ScoredDoc, drop_positions
from .errors import DataConsistencyError, FormatError, ParseError
from .index import EmbeddingStore, build_store
from .mining import PairRecord, TripletRecord
from .training import LossReport, TripletEmbeddings

PathLike = Union[str, os.PathLike]
Qrels = Dict[str, Dict[int, int]]
Run = Dict[str, List[Tuple[int, float]]]

LEMB_MAGIC = b"LEMB"
LEMB_VERSION = 1
_LEMB_HEADER = struct.Struct("<4sHIQ")
_LEMB_RECORD = struct.Struct("<QI")

PAIRS_HEADER = ["pair_id", "sentence", "positive"]
TRIPLETS_HEADER = ["sentence", "positive", "negative"]


def _nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


# --------------------------------------------------------------------------
# LEMB token embeddings
#
#   offset  size  field
#   0       4     magic "LEMB"
#   4       2     u16 version (1)
#   6       4     u32 dim
#   10      8     u64 numDocs
#   then per document:
#           8     u64 docId
#           4     u32 numTokens
#           4*numTokens*dim  f32 rows


def write_embeddings(path: PathLike, docs: Sequence[Tuple[int, np.ndarray]]) -> None:
    if not docs:
        raise ValueError("nothing to write")
    dim = np.asarray(docs[0][1]).shape[-1]
    with open(path, "wb") as fh:
        fh.write(_LEMB_HEADER.pack(LEMB_MAGIC, LEMB_VERSION, dim, len(docs)))
        for doc_id, mat in docs:
            mat = np.atleast_2d(np.asarray(mat))
            if mat.shape[1] != dim:
                raise ValueError(f"doc {doc_id} has dim {mat.shape[1]}, expected {dim}")
            fh.write(_LEMB_RECORD.pack(int(doc_id), mat.shape[0]))
            fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())


def read_embeddings(
    path: PathLike, normalize: bool = True, skip_positions: Iterable[int] = ()
) -> List[Tuple[int, np.ndarray]]:
    """Read a LEMB file into (doc_id, float32 matrix) pairs in file order.

    With ``normalize`` (default), rows further than 1e-6 from unit norm are
    rescaled; rows already within tolerance are returned bit-for-bit. Without
    it, such rows are an error. ``skip_positions`` drops token positions
    (negative counts from the end) from every matrix.

    Raises:
        FormatError: bad header, truncation, trailing bytes, duplicate ids,
            zero rows, or NaN/Inf; the byte offset is attached.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    r = Reader(buf)
    magic, version, dim, num_docs = r.unpack(_LEMB_HEADER, "header")
    if magic != LEMB_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {LEMB_MAGIC!r}", 0)
    if version != LEMB_VERSION:
        raise FormatError(f"unsupported version: expected {LEMB_VERSION}, got {version}", 4)
    if dim == 0:
        raise FormatError("dim must be positive", 6)
    skip = list(skip_positions)
    out = []
    seen = set()
    for _ in range(num_docs):
        rec_at = r.pos
        doc_id, n_tok = r.unpack(_LEMB_RECORD, "document record header")
        if doc_id in seen:
            raise FormatError(f"duplicate document id {doc_id}", rec_at)
        seen.add(doc_id)
        if n_tok == 0:
            raise FormatError(f"document {doc_id} has no tokens", rec_at + 8)
        rows_at = r.pos
        mat = r.array("<f4", n_tok * dim, f"rows of document {doc_id}").reshape(n_tok, dim)
        mat = mat.astype(np.float32)
        if not np.all(np.isfinite(mat)):
            bad = int(np.flatnonzero(~np.isfinite(mat).all(axis=1))[0])
            raise FormatError(f"document {doc_id} row {bad} has NaN/Inf", rows_at + 4 * dim * bad)
        norms = np.linalg.norm(mat.astype(np.float64), axis=1)
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise FormatError(
                f"document {doc_id} row {int(zero[0])} is a zero vector", rows_at + 4 * dim * int(zero[0])
            )
        off = np.abs(norms - 1.0) > NORM_TOL
        if off.any():
            if not normalize:
                bad = int(np.flatnonzero(off)[0])
                raise FormatError(
                    f"document {doc_id} row {bad} has norm {norms[bad]:.6g}, expected 1",
                    rows_at + 4 * dim * bad,
                )
            fixed = mat.astype(np.float64)
            fixed[off] /= norms[off, None]
            mat = fixed.astype(np.float32)
        if skip:
            mat = drop_positions(mat, skip)
        out.append((int(doc_id), mat))
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after {num_docs} documents", r.pos)
    return out


def store_from_embeddings(docs: Sequence[Tuple[int, np.ndarray]]) -> EmbeddingStore:
    """Build a store; document ids must be exactly 0..n-1 (any file order)."""
    ordered = sorted(docs, key=lambda d: d[0])
    ids = [d for d, _ in ordered]
    if ids != list(range(len(ids))):
        wrong = sorted(set(ids) ^ set(range(len(ids))))
        raise DataConsistencyError("store document ids must be dense 0..n-1", wrong)
    return build_store([m for _, m in ordered])


def read_triplet_embeddings(path: PathLike, normalize: bool = True) -> List[TripletEmbeddings]:
    """Triplets stored as consecutive (query, positive, negative) LEMB records."""
    records = read_embeddings(path, normalize)
    if len(records) % 3:
        raise FormatError(f"triplet file holds {len(records)} records, not a multiple of 3")
    return [
        TripletEmbeddings(records[i][1], records[i + 1][1], records[i + 2][1])
        for i in range(0, len(records), 3)
    ]


def write_triplet_embeddings(path: PathLike, triplets: Sequence[TripletEmbeddings]) -> None:
    docs = []
    for t, trip in enumerate(triplets):
        docs += [(3 * t, trip.query), (3 * t + 1, trip.positive), (3 * t + 2, trip.negative)]
    write_embeddings(path, docs)


# --------------------------------------------------------------------------
# text formats


@dataclass(frozen=True)
class TextRecord:
    id: int
    text: str


def _lines(path: PathLike):
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, 1):
            yield lineno, line.rstrip("\n").rstrip("\r")


def _int(value, what: str, lineno: int, path) -> int:
    if isinstance(value, (bool, float)):
        raise ParseError(f"{what} {value!r} is not an integer", lineno, str(path))
    try:
        v = int(value)
    except (TypeError, ValueError):
        raise ParseError(f"{what} {value!r} is not an integer", lineno, str(path)) from None
    if v < 0:
        raise ParseError(f"{what} {v} is negative", lineno, str(path))
    return v


def read_jsonl_corpus(path: PathLike, id_field: str = "doc_id") -> List[TextRecord]:
    """JSONL records ``{id_field: int, "text": str}``; blank lines are skipped."""
    out = []
    seen = set()
    for lineno, line in _lines(path):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", lineno, str(path)) from None
        if not isinstance(obj, dict) or id_field not in obj or "text" not in obj:
            raise ParseError(f"expected fields {id_field!r} and 'text'", lineno, str(path))
        if not isinstance(obj["text"], str):
            raise ParseError("'text' must be a string", lineno, str(path))
        rid = _int(obj[id_field], id_field, lineno, path)
        if rid in seen:
            raise ParseError(f"duplicate {id_field} {rid}", lineno, str(path))
        seen.add(rid)
        out.append(TextRecord(rid, _nfc(obj["text"])))
    return out


def write_jsonl_corpus(path: PathLike, records: Iterable[TextRecord], id_field: str = "doc_id") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps({id_field: rec.id, "text": rec.text}, ensure_ascii=False) + "\n")


def read_qrels(path: PathLike) -> Qrels:
    qrels: Qrels = defaultdict(dict)
    for lineno, line in _lines(path):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"expected 4 fields 'qid 0 docid grade', got {len(parts)}", lineno, str(path))
        qid, _, doc, grade = parts
        doc_id = _int(doc, "docid", lineno, path)
        try:
            g = int(grade)
        except ValueError:
            raise ParseError(f"grade {grade!r} is not an integer", lineno, str(path)) from None
        if g < 0:
            raise ParseError(f"negative grade {g}", lineno, str(path))
        if doc_id in qrels[qid]:
            raise ParseError(f"duplicate judgment for ({qid}, {doc_id})", lineno, str(path))
        qrels[qid][doc_id] = g
    return dict(qrels)


def write_qrels(path: PathLike, qrels: Qrels) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid, judged in qrels.items():
            for doc_id, grade in judged.items():
                fh.write(f"{qid}\t0\t{doc_id}\t{grade}\n")


def read_run(path: PathLike) -> Run:
    """Parse a TREC run; lines of one query may appear in any order.

    Raises:
        ParseError: wrong field count, bad numbers, duplicate documents,
            ranks not exactly 1..n, or scores increasing with rank.
    """
    raw: Dict[str, List[Tuple[int, int, float, int]]] = defaultdict(list)
    for lineno, line in _lines(path):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ParseError(f"expected 6 fields 'qid Q0 docid rank score tag', got {len(parts)}", lineno, str(path))
        qid, _, doc, rank, score, _tag = parts
        doc_id = _int(doc, "docid", lineno, path)
        r = _int(rank, "rank", lineno, path)
        try:
            s = float(score)
        except ValueError:
            raise ParseError(f"score {score!r} is not a number", lineno, str(path)) from None
        raw[qid].append((r, doc_id, s, lineno))
    run: Run = {}
    for qid, rows in raw.items():
        rows.sort()
        ranks = [r for r, *_ in rows]
        if ranks != list(range(1, len(rows) + 1)):
            raise ParseError(f"query {qid}: ranks are not contiguous from 1", path=str(path))
        docs = [d for _, d, _, _ in rows]
        if len(set(docs)) != len(docs):
            raise ParseError(f"query {qid}: document listed twice", path=str(path))
        for (_, _, prev, _), (_, _, cur, ln) in zip(rows, rows[1:]):
            if cur > prev:
                raise ParseError(f"query {qid}: score increases with rank", ln, str(path))
        run[qid] = [(d, s) for _, d, s, _ in rows]
    return run


def run_lines(qid: str, ranked: Sequence, tag: str = "lir") -> List[str]:
    """TREC lines for one query from ScoredDoc objects or (doc_id, score) pairs."""
    lines = []
    for rank, item in enumerate(ranked, 1):
        if isinstance(item, ScoredDoc):
            doc_id, score = item.doc_id, item.score
        else:
            doc_id, score = item
        lines.append(f"{qid}\tQ0\t{doc_id}\t{rank}\t{score:.6f}\t{tag}")
    return lines


def write_run(dest: Union[PathLike, TextIO], run: Run, tag: str = "lir") -> None:
    text = "".join(line + "\n" for qid, ranked in run.items() for line in run_lines(qid, ranked, tag))
    if isinstance(dest, io.TextIOBase) or hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def read_candidates(path: PathLike) -> Dict[str, List[int]]:
    """Candidate lists from a TREC run (6 fields) or an id list (``qid docid``)."""
    lines = [(n, l) for n, l in _lines(path) if l.strip()]
    if lines and len(lines[0][1].split()) == 6:
        return {qid: [d for d, _ in ranked] for qid, ranked in read_run(path).items()}
    out: Dict[str, List[int]] = defaultdict(list)
    for lineno, line in lines:
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected 'qid docid', got {len(parts)} fields", lineno, str(path))
        out[parts[0]].append(_int(parts[1], "docid", lineno, path))
    return dict(out)


def _check_header(path, got: List[str], want: List[str]) -> None:
    if got != want:
        raise ParseError("expected header " + repr("\t".join(want)), 1, str(path))


def read_pairs_tsv(path: PathLike) -> List[PairRecord]:
    out = []
    lines = _lines(path)
    first = next(lines, None)
    if first is None:
        raise ParseError("empty file", path=str(path))
    _check_header(path, first[1].split("\t"), PAIRS_HEADER)
    for lineno, line in lines:
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", lineno, str(path))
        pid = _int(parts[0], "pair_id", lineno, path)
        try:
            out.append(PairRecord(pid, _nfc(parts[1]), _nfc(parts[2])))
        except ValueError as exc:
            raise ParseError(str(exc), lineno, str(path)) from None
    return out


def _check_cell(text: str) -> str:
    if "\t" in text or "\n" in text or "\r" in text:
        raise ValueError(f"text contains a tab or newline: {text[:40]!r}")
    return text


def write_pairs_tsv(path: PathLike, pairs: Iterable[PairRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(PAIRS_HEADER) + "\n")
        for p in pairs:
            fh.write(f"{p.pair_id}\t{_check_cell(p.sentence)}\t{_check_cell(p.positive)}\n")


def attach_pair_embeddings(pairs: List[PairRecord], path: PathLike) -> List[PairRecord]:
    """Fill sentence/positive embeddings from a LEMB sidecar.

    Each sidecar record's doc id is a pair id and holds two rows: the
    sentence embedding, then the positive's embedding.
    """
    by_id = {}
    for pid, mat in read_embeddings(path, normalize=True):
        if mat.shape[0] != 2:
            raise FormatError(f"pair {pid}: expected 2 embedding rows, got {mat.shape[0]}")
        by_id[pid] = mat
    missing = [p.pair_id for p in pairs if p.pair_id not in by_id]
    if missing:
        raise DataConsistencyError("pairs without embeddings", missing)
    for p in pairs:
        p.sentence_embedding = by_id[p.pair_id][0]
        p.positive_embedding = by_id[p.pair_id][1]
    return pairs


def write_pair_embeddings(path: PathLike, pairs: Sequence[PairRecord]) -> None:
    write_embeddings(
        path, [(p.pair_id, np.vstack([p.sentence_embedding, p.positive_embedding])) for p in pairs]
    )


def read_triplets_tsv(path: PathLike) -> List[TripletRecord]:
    out = []
    lines = _lines(path)
    first = next(lines, None)
    if first is None:
        raise ParseError("empty file", path=str(path))
    _check_header(path, first[1].split("\t"), TRIPLETS_HEADER)
    for lineno, line in lines:
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", lineno, str(path))
        if not all(p.strip() for p in parts):
            raise ParseError("empty field", lineno, str(path))
        try:
            out.append(TripletRecord(*(_nfc(p) for p in parts)))
        except ValueError as exc:
            raise ParseError(str(exc), lineno, str(path)) from None
    return out


def format_triplets_tsv(triplets: Iterable[TripletRecord]) -> str:
    rows = ["\t".join(TRIPLETS_HEADER)]
    for t in triplets:
        rows.append("\t".join(_check_cell(x) for x in (t.sentence, t.positive, t.negative)))
    return "\n".join(rows) + "\n"


def write_triplets_tsv(path: PathLike, triplets: Iterable[TripletRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_triplets_tsv(triplets))


def format_loss_report(reports: Sequence[LossReport], ids: Optional[Sequence] = None) -> str:
    ids = range(len(reports)) if ids is None else ids
    rows = ["triplet_id\tloss\tscore_pos\tscore_neg"]
    for tid, r in zip(ids, reports):
        rows.append(f"{tid}\t{r.loss:.12g}\t{r.score_pos:.12g}\t{r.score_neg:.12g}")
    return "\n".join(rows) + "\n"
