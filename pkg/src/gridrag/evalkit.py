"""Retrieval metrics, labeled query sets and agent cost aggregation."""
from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass
from pathlib import Path

from .errors import EmptyRelevantSet, UnresolvedLabel
from .fusion import FusionConfig
from .index import Index, dense_search, hybrid_fused, lexical_search

QUERYSET_FORMAT_VERSION = 1
RESULTS_FORMAT_VERSION = 1
RETRIEVERS = ("dense", "lexical", "hybrid")
METRICS = ("ndcg", "recall", "map")


def _check(relevant, K):
    if K < 1:
        raise ValueError("K must be >= 1")
    if not relevant:
        raise EmptyRelevantSet("relevant set is empty")


def recall_at_k(ranking, relevant, K: int) -> float:
    _check(relevant, K)
    relevant = set(relevant)
    return len(set(ranking[:K]) & relevant) / len(relevant)


def ndcg_at_k(ranking, relevant, K: int) -> float:
    """Binary gains, 1/log2(pos+1) discount."""
    _check(relevant, K)
    relevant = set(relevant)
    seen = set()
    dcg = 0.0
    for pos, item in enumerate(ranking[:K], 1):
        if item in relevant and item not in seen:
            dcg += 1.0 / math.log2(pos + 1)
        seen.add(item)
    ideal = sum(1.0 / math.log2(pos + 1) for pos in range(1, min(len(relevant), K) + 1))
    return dcg / ideal


def map_at_k(ranking, relevant, K: int) -> float:
    """Average precision at each relevant hit in the top K, over min(|relevant|, K)."""
    _check(relevant, K)
    relevant = set(relevant)
    seen = set()
    hits = 0
    total = 0.0
    for pos, item in enumerate(ranking[:K], 1):
        if item in relevant and item not in seen:
            hits += 1
            total += hits / pos
        seen.add(item)
    return total / min(len(relevant), K)


_METRIC_FN = {"ndcg": ndcg_at_k, "recall": recall_at_k, "map": map_at_k}


@dataclass(frozen=True)
class LabeledQuery:
    query_id: str
    query: str
    relevant_chunk_ids: frozenset

    def __post_init__(self):
        if not self.relevant_chunk_ids:
            raise EmptyRelevantSet(f"query {self.query_id} has no relevant chunks")


@dataclass(frozen=True)
class EvalRow:
    retriever: str
    metric: str
    K: int
    value: float

    def to_dict(self) -> dict:
        return {"retriever": self.retriever, "metric": self.metric, "K": self.K, "value": self.value}


def load_queryset(path: str | Path) -> list[LabeledQuery]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != QUERYSET_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported query set format_version {doc.get('format_version')!r}")
    return [LabeledQuery(str(q["query_id"]), q["query"], frozenset(q["relevant_chunk_ids"])) for q in doc["queries"]]


def dump_queryset(queries) -> str:
    return json.dumps({"format_version": QUERYSET_FORMAT_VERSION,
                       "queries": [{"query_id": q.query_id, "query": q.query,
                                    "relevant_chunk_ids": sorted(q.relevant_chunk_ids)} for q in queries]},
                      indent=1, ensure_ascii=False) + "\n"


def rankings(index: Index, query: str, depth: int, fusion: FusionConfig | None = None) -> dict[str, list[str]]:
    """Ranked chunk ids per retriever, each at least ``depth`` long when the corpus allows."""
    fusion = fusion or FusionConfig()
    cfg = FusionConfig(k=fusion.k, top_k=depth, depth=max(fusion.depth, depth))
    return {
        "dense": dense_search(index, query, K=depth).ids,
        "lexical": lexical_search(index, query, K=depth).ids,
        "hybrid": hybrid_fused(index, query, None, None, cfg).ids,
    }


def run_retrieval_eval(index: Index, queries, cutoffs=(5, 10), fusion: FusionConfig | None = None) -> list[EvalRow]:
    """Mean metric per (retriever, metric, K) over the query set."""
    cutoffs = sorted(set(cutoffs))
    if not cutoffs or cutoffs[0] < 1:
        raise ValueError("cutoffs must be positive integers")
    known = {c.chunk_id for c in index.chunks}
    for q in queries:
        for cid in sorted(q.relevant_chunk_ids):
            if cid not in known:
                raise UnresolvedLabel(q.query_id, cid)
    sums = {(r, m, k): 0.0 for r in RETRIEVERS for m in METRICS for k in cutoffs}
    for q in sorted(queries, key=lambda q: q.query_id):
        ranked = rankings(index, q.query, max(cutoffs), fusion)
        for r in RETRIEVERS:
            for m in METRICS:
                for k in cutoffs:
                    sums[(r, m, k)] += _METRIC_FN[m](ranked[r], q.relevant_chunk_ids, k)
    n = len(queries) or 1
    return [EvalRow(r, m, k, sums[(r, m, k)] / n) for r in RETRIEVERS for m in METRICS for k in cutoffs]


def format_table(rows) -> str:
    cutoffs = sorted({r.K for r in rows})
    cols = [f"{m}@{k}" for m in METRICS for k in cutoffs]
    value = {(r.retriever, f"{r.metric}@{r.K}"): r.value for r in rows}
    lines = ["retriever".ljust(10) + "".join(c.rjust(11) for c in cols)]
    for ret in RETRIEVERS:
        if any((ret, c) in value for c in cols):
            lines.append(ret.ljust(10) + "".join(f"{value.get((ret, c), float('nan')):11.4f}" for c in cols))
    return "\n".join(lines)


def results_document(rows, n_queries: int) -> dict:
    return {"format_version": RESULTS_FORMAT_VERSION, "n_queries": n_queries, "rows": [r.to_dict() for r in rows]}


# ----------------------------------------------------------------------- costs

def _stats(values) -> dict:
    if not values:
        return {"mean": None, "median": None}
    return {"mean": statistics.fmean(values), "median": statistics.median(values)}


def cost_report(traces) -> dict:
    """Mean and median tool calls, token estimates and wall latency per trace.

    Bootstrap injections are not tool calls; latency is last minus first timestamp.
    """
    traces = [list(t) for t in traces]
    calls = [sum(1 for e in t if not e.is_bootstrap) for t in traces]
    tokens = [sum(e.token_estimate for e in t) for t in traces]
    latency = [(t[-1].timestamp - t[0].timestamp) if t else 0.0 for t in traces]
    return {"count": len(traces), "tool_calls": _stats(calls), "tokens": _stats(tokens), "latency_s": _stats(latency)}
