import numpy as np
from lir.formats import TextRecord, write_embeddings, write_jsonl_corpus, write_qrels

rng = np.random.default_rng(0)

def unit(n, dim=32):
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)

docs = [unit(int(rng.integers(4, 12))) for _ in range(500)]
write_embeddings("docs.lemb", list(enumerate(docs)))
# each query is a noisy copy of a few tokens from one target document
targets = rng.integers(0, 500, 20)
queries = []
for q, t in enumerate(targets):
    x = docs[t][:3] + 0.3 * rng.standard_normal((3, 32))
    queries.append((q, x / np.linalg.norm(x, axis=1, keepdims=True)))
write_embeddings("queries.lemb", queries)
write_qrels("qrels.txt", {str(q): {int(t): 1} for q, t in enumerate(targets)})
write_jsonl_corpus("corpus.jsonl", [TextRecord(i, f"document {i}") for i in range(500)])
write_jsonl_corpus("queries.jsonl", [TextRecord(q, f"document {t}") for q, t in enumerate(targets)], "query_id")
