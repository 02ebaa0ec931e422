"""Independent reference for the retrieval-suite golden metrics.

Rankings come from exhaustive scoring (tests/oracles.py), metrics from the
naive reference formulas there. Nothing here calls the library's search or
metric code; only the workbook loader, chunker and mock embedder are shared.
"""
import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from oracles import (  # noqa: E402
    as_stored, bm25_reference, cosine, hybrid_reference, map_ref, ndcg_ref, recall_ref,
)


def main(out=ROOT / "tests" / "golden" / "retrieval_suite.metrics.json", cutoffs=(5, 10)):
    from gridrag.chunker import chunk_workbook
    from gridrag.embedding import MockEmbedder
    from gridrag.workbook import ingest_canonical

    data = ROOT / "src" / "gridrag" / "data"
    chunks = sorted(chunk_workbook(ingest_canonical(data / "retrieval_suite.wb.json")), key=lambda c: c.chunk_id)
    queries = json.loads((data / "retrieval_suite.queries.json").read_text(encoding="utf-8"))["queries"]
    emb = MockEmbedder()
    vecs = [as_stored(list(emb.embed_text(c.text))) for c in chunks]
    depth = max(cutoffs)
    metric_fns = {"ndcg": ndcg_ref, "recall": recall_ref, "map": map_ref}
    sums = {}
    for q in queries:
        qv = list(emb.embed_text(q["query"]))
        dense = sorted(((cosine(qv, v), c.chunk_id) for v, c in zip(vecs, chunks)), key=lambda p: (-p[0], p[1]))
        lex = bm25_reference([c.text for c in chunks], q["query"])
        lexical = sorted(((s, chunks[i].chunk_id) for i, s in lex.items()), key=lambda p: (-p[0], p[1]))
        ranked = {
            "dense": [cid for _, cid in dense[:depth]],
            "lexical": [cid for _, cid in lexical[:depth]],
            "hybrid": [cid for cid, _ in hybrid_reference(chunks, emb, q["query"], top_k=depth)],
        }
        relevant = set(q["relevant_chunk_ids"])
        for r, ranking in ranked.items():
            for m, fn in metric_fns.items():
                for k in cutoffs:
                    sums[(r, m, k)] = sums.get((r, m, k), 0.0) + fn(ranking, relevant, k)
    rows = [{"retriever": r, "metric": m, "K": k, "value": sums[(r, m, k)] / len(queries)}
            for r in ("dense", "lexical", "hybrid") for m in ("ndcg", "recall", "map") for k in cutoffs]
    doc = {"format_version": 1, "n_queries": len(queries), "rows": rows}
    Path(out).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    for row in rows:
        print(f"{row['retriever']:8} {row['metric']:7} @{row['K']:<3} {row['value']:.6f}")


if __name__ == "__main__":
    main()
