"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or format error.
Log level comes from the ``LIR_LOG`` environment variable (default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

from . import __version__
from .bm25 import B, K1, bm25_build
from .errors import DataConsistencyError, DegenerateMaxError, LirError
from .evaluation import CUTOFFS, MODES, evaluate_pipeline, evaluate_run
from .formats import (
    attach_pair_embeddings,
    format_loss_report,
    format_triplets_tsv,
    read_candidates,
    read_embeddings,
    read_jsonl_corpus,
    read_pairs_tsv,
    read_qrels,
    read_run,
    read_triplet_embeddings,
    run_lines,
    store_from_embeddings,
)
from .index import DEFAULT_K_PRIME, build_flat, build_ivf, inspect_index, load_index, save_index
from .mining import DEFAULT_TOP_N, mine_hard, mine_random
from .rerank import DEFAULT_BATCH_SIZE, rerank_batch, rerank_preindexed
from .retrieval import RetrievalParams, retrieve
from .training import gradient_check, pairwise_loss

log = logging.getLogger("lir")

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positions(text: str) -> List[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--threads", type=int, default=1, help="worker threads (default: %(default)s)")
    p.add_argument("--config", help="key=value file supplying flag defaults; flags win")
    return p


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    common = _common()
    parser = _Parser(prog="lir", description="Late-interaction retrieval over precomputed token embeddings.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    # index
    idx = sub.add_parser("index", help="build or inspect a token index")
    idx_sub = idx.add_subparsers(dest="action", metavar="ACTION", required=True)
    b = idx_sub.add_parser("build", parents=[common], formatter_class=fmt, help="build an index from a LEMB file")
    b.add_argument("--embeddings", required=True, help="document token embeddings (LEMB)")
    b.add_argument("--out", required=True, help="output index path (LIRX)")
    b.add_argument("--kind", choices=["flat", "ivf"], default="flat", help="exact scan or inverted-file index")
    b.add_argument("--cells", type=int, default=None, help="IVF cells k")
    b.add_argument("--seed", type=int, default=None, help="k-means seed (required for ivf)")
    b.add_argument("--no-normalize", action="store_true", help="reject non-unit rows instead of rescaling")
    b.add_argument("--skip-positions", type=_positions, default=[], help="token positions to drop, e.g. 0,-1")
    b.set_defaults(func=cmd_index_build, _leaf=b)
    ins = idx_sub.add_parser("inspect", parents=[common], formatter_class=fmt, help="print index header summary")
    ins.add_argument("--index", required=True, help="LIRX index file")
    ins.set_defaults(func=cmd_index_inspect, _leaf=ins)

    # search
    s = sub.add_parser("search", parents=[common], formatter_class=fmt, help="retrieve documents, TREC run on stdout")
    s.add_argument("--index", required=True, help="LIRX index file")
    s.add_argument("--queries", required=True, help="query token embeddings (LEMB; doc id = query id)")
    s.add_argument("--k-prime", type=int, default=DEFAULT_K_PRIME, help="nearest corpus tokens per query token")
    s.add_argument("--top-k", type=int, default=10, help="results per query")
    s.add_argument("--nprobe", type=int, default=None, help="IVF cells probed per query token")
    s.add_argument("--normalize", action="store_true", help="report score divided by query token count")
    s.add_argument("--skip-positions", type=_positions, default=[], help="query token positions to drop")
    s.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE, help="documents scored per batch")
    s.add_argument("--tag", default="lir", help="run tag column")
    s.set_defaults(func=cmd_search, _leaf=s)

    # rerank
    r = sub.add_parser("rerank", parents=[common], formatter_class=fmt, help="re-rank candidate lists by MaxSim")
    r.add_argument("--queries", required=True, help="query token embeddings (LEMB)")
    r.add_argument("--candidates", required=True, help="TREC run or 'qid docid' lines")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--index", help="pre-indexed mode: read document matrices from a LIRX file")
    src.add_argument("--docs", help="batch mode: read document matrices from a LEMB file")
    r.add_argument("--top-k", type=int, default=None, help="results per query (default: all)")
    r.add_argument("--min-score", type=float, default=None, help="drop results below this score")
    r.add_argument("--normalize", action="store_true", help="report score divided by query token count")
    r.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE, help="documents scored per batch")
    r.add_argument("--tag", default="lir-rerank", help="run tag column")
    r.set_defaults(func=cmd_rerank, _leaf=r)

    # eval
    e = sub.add_parser("eval", parents=[common], formatter_class=fmt, help="Recall/NDCG at 1,5,10,20,50")
    e.add_argument("--qrels", required=True, help="TREC qrels file")
    e.add_argument("--mode", choices=MODES, default=None, help="pipeline to run")
    e.add_argument("--run", help="evaluate an existing TREC run instead of running a pipeline")
    e.add_argument("--index", help="token index (retrieve, bm25-then-rerank)")
    e.add_argument("--queries", help="query token embeddings (LEMB)")
    e.add_argument("--corpus", help="corpus JSONL with doc_id, text (bm25 modes)")
    e.add_argument("--query-text", help="queries JSONL with query_id, text (bm25 modes)")
    e.add_argument("--candidates", type=int, default=100, help="BM25 pool size for bm25-then-rerank")
    e.add_argument("--k-prime", type=int, default=DEFAULT_K_PRIME, help="nearest corpus tokens per query token")
    e.add_argument("--nprobe", type=int, default=None, help="IVF cells probed per query token")
    e.add_argument("--skip-positions", type=_positions, default=[], help="query token positions to drop")
    e.add_argument("--k1", type=float, default=K1, help="BM25 k1")
    e.add_argument("--b", type=float, default=B, help="BM25 b")
    e.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE, help="documents scored per batch")
    e.add_argument("--run-out", help="also write the pipeline's run here")
    e.set_defaults(func=cmd_eval, _leaf=e)

    # mine
    m = sub.add_parser("mine", help="build triplets from sentence/positive pairs")
    m_sub = m.add_subparsers(dest="strategy", metavar="STRATEGY", required=True)
    mr = m_sub.add_parser("random", parents=[common], formatter_class=fmt, help="random negatives")
    mr.add_argument("--pairs", required=True, help="TSV: pair_id sentence positive")
    mr.add_argument("--seed", type=int, required=True, help="RNG seed")
    mr.add_argument("--out", help="output TSV (default stdout)")
    mr.set_defaults(func=cmd_mine_random, _leaf=mr)
    mh = m_sub.add_parser("hard", parents=[common], formatter_class=fmt, help="hard negatives by embedding similarity")
    mh.add_argument("--pairs", required=True, help="TSV: pair_id sentence positive")
    mh.add_argument("--embeddings", required=True, help="LEMB sidecar: per pair id, rows [sentence, positive]")
    mh.add_argument("--seed", type=int, required=True, help="RNG seed")
    mh.add_argument("--top-n", type=int, default=DEFAULT_TOP_N, help="pool of most similar candidates")
    mh.add_argument("--rank", type=int, default=1, help="1-based pool position to take")
    mh.add_argument("--sample", action="store_true", help="draw uniformly from the pool instead of --rank")
    mh.add_argument("--out", help="output TSV (default stdout)")
    mh.set_defaults(func=cmd_mine_hard, _leaf=mh)

    # loss
    lo = sub.add_parser("loss", help="pairwise loss diagnostics")
    lo_sub = lo.add_subparsers(dest="action", metavar="ACTION", required=True)
    lc = lo_sub.add_parser("check", parents=[common], formatter_class=fmt, help="per-triplet loss TSV")
    lc.add_argument("--triplets", required=True, help="LEMB file of consecutive (query, positive, negative) records")
    lc.add_argument("--fd-check", action="store_true", help="compare analytic and finite-difference gradients")
    lc.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    lc.add_argument("--tolerance", type=float, default=1e-4, help="max relative gradient error")
    lc.set_defaults(func=cmd_loss_check, _leaf=lc)
    return parser


# --------------------------------------------------------------------------
# config


def read_config(path: str) -> Dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (x.strip() for x in line.split("=", 1))
            out[key.replace("-", "_")] = value.strip('"').strip("'")
    return out


def _apply_config(leaf: argparse.ArgumentParser, cfg: Dict[str, str]) -> None:
    defaults = {}
    for action in leaf._actions:
        if action.dest not in cfg or action.dest in ("config", "help"):
            continue
        value = cfg[action.dest]
        if isinstance(action, argparse._StoreTrueAction):
            value = value.lower() in ("1", "true", "yes", "on")
        defaults[action.dest] = value
    leaf.set_defaults(**defaults)


# --------------------------------------------------------------------------
# commands


def _out(text: str) -> None:
    sys.stdout.write(text)


def _write_text(path: Optional[str], text: str) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        _out(text)


def cmd_index_build(args) -> int:
    docs = read_embeddings(args.embeddings, normalize=not args.no_normalize, skip_positions=args.skip_positions)
    store = store_from_embeddings(docs)
    if args.kind == "ivf":
        if args.seed is None or args.cells is None:
            raise UsageError("--kind ivf requires --cells and --seed")
        index = build_ivf(store, args.cells, args.seed)
    else:
        index = build_flat(store)
    save_index(index, args.out)
    log.info("wrote %s index with %d docs / %d tokens to %s", index.kind, store.num_docs, store.num_tokens, args.out)
    return 0


def cmd_index_inspect(args) -> int:
    _out("\n".join(inspect_index(load_index(args.index))) + "\n")
    return 0


def cmd_search(args) -> int:
    index = load_index(args.index)
    params = RetrievalParams(
        k_prime=args.k_prime, top_k=args.top_k, normalize=args.normalize, nprobe=args.nprobe,
        skip_positions=tuple(args.skip_positions), batch_size=args.batch_size, workers=args.threads,
    )
    for qid, query in read_embeddings(args.queries):
        ranked = retrieve(index, query, params)
        pairs = [(d.doc_id, d.normalized_score if args.normalize else d.score) for d in ranked]
        for line in run_lines(str(qid), pairs, args.tag):
            _out(line + "\n")
    return 0


def cmd_rerank(args) -> int:
    queries = {str(q): m for q, m in read_embeddings(args.queries)}
    cands = read_candidates(args.candidates)
    unknown = [q for q in cands if q not in queries]
    if unknown:
        raise DataConsistencyError("candidate queries without embeddings", unknown)
    kw = dict(normalize=args.normalize, min_score=args.min_score, batch_size=args.batch_size, workers=args.threads)
    if args.index:
        store = load_index(args.index).store
        rank = lambda q, ids: rerank_preindexed(store, queries[q], ids, args.top_k, **kw)
    else:
        docs = dict(read_embeddings(args.docs))
        def rank(q, ids):
            missing = [d for d in ids if d not in docs]
            if missing:
                raise DataConsistencyError(f"query {q}: candidates missing from --docs", missing)
            return rerank_batch(queries[q], [(d, docs[d]) for d in ids], args.top_k, **kw)
    for qid, ids in cands.items():
        ranked = rank(qid, ids)
        pairs = [(d.doc_id, d.normalized_score if args.normalize else d.score) for d in ranked]
        for line in run_lines(qid, pairs, args.tag):
            _out(line + "\n")
    return 0


def _dense_texts(path: str, id_field: str) -> List[str]:
    recs = sorted(read_jsonl_corpus(path, id_field), key=lambda r: r.id)
    ids = [r.id for r in recs]
    if ids != list(range(len(ids))):
        raise DataConsistencyError(f"{path}: {id_field} values must be 0..n-1",
                                   sorted(set(ids) ^ set(range(len(ids)))))
    return [r.text for r in recs]


def cmd_eval(args) -> int:
    qrels = read_qrels(args.qrels)
    if args.run:
        table = evaluate_run(read_run(args.run), qrels, CUTOFFS)
        _out(table.format())
        return 0
    if args.mode is None:
        raise UsageError("eval needs --mode or --run")
    kw = {}
    if args.mode in ("retrieve", "bm25-then-rerank"):
        if not (args.index and args.queries):
            raise UsageError(f"--mode {args.mode} needs --index and --queries")
        kw["index"] = load_index(args.index)
        kw["query_embeddings"] = {str(q): m for q, m in read_embeddings(args.queries)}
    if args.mode in ("bm25", "bm25-then-rerank"):
        if not (args.corpus and args.query_text):
            raise UsageError(f"--mode {args.mode} needs --corpus and --query-text")
        kw["bm25_index"] = bm25_build(_dense_texts(args.corpus, "doc_id"), args.k1, args.b)
        kw["query_texts"] = {str(r.id): r.text for r in read_jsonl_corpus(args.query_text, "query_id")}
    params = RetrievalParams(
        k_prime=args.k_prime, nprobe=args.nprobe, skip_positions=tuple(args.skip_positions),
        batch_size=args.batch_size, workers=args.threads,
    )
    table = evaluate_pipeline(args.mode, qrels, params=params, candidates=args.candidates, **kw)
    if args.run_out:
        lines = [l for q, ranked in table.run.items() for l in run_lines(q, ranked, args.mode)]
        _write_text(args.run_out, "".join(l + "\n" for l in lines))
    _out(table.format())
    return 0


def cmd_mine_random(args) -> int:
    triplets = mine_random(read_pairs_tsv(args.pairs), args.seed)
    _write_text(args.out, format_triplets_tsv(triplets))
    return 0


def cmd_mine_hard(args) -> int:
    pairs = attach_pair_embeddings(read_pairs_tsv(args.pairs), args.embeddings)
    rank = None if args.sample else args.rank
    triplets = mine_hard(pairs, top_n=args.top_n, rank_to_take=rank, seed=args.seed)
    _write_text(args.out, format_triplets_tsv(triplets))
    return 0


def cmd_loss_check(args) -> int:
    triplets = read_triplet_embeddings(args.triplets)
    reports = [pairwise_loss(t) for t in triplets]
    _out(format_loss_report(reports))
    mean = sum(r.loss for r in reports) / len(reports) if reports else float("nan")
    print(f"triplets\t{len(reports)}\nmean_loss\t{mean:.12g}", file=sys.stderr)
    if args.fd_check:
        worst, skipped = 0.0, 0
        for t in triplets:
            try:
                worst = max(worst, gradient_check(t, args.h))
            except DegenerateMaxError:
                skipped += 1
        ok = worst < args.tolerance
        print(f"fd_max_rel_error\t{worst:.3e}\nfd_skipped_degenerate\t{skipped}\n"
              f"fd_check\t{'PASS' if ok else 'FAIL'}", file=sys.stderr)
        if not ok:
            return EXIT_DATA
    return 0


# --------------------------------------------------------------------------


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=os.environ.get("LIR_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            _apply_config(args._leaf, read_config(args.config))
            args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(f"lir: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LirError, OSError, ValueError) as exc:
        print(f"lir: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
